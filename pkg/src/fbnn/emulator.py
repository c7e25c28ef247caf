"""Calibration sets and DNN emulators of the parameter-to-prediction map.

Calibration runs a short MCMC chain and records ``(theta_j, G(X_ref; theta_j))``
pairs. An emulator is a small ReLU network trained on those pairs to map
``theta`` straight to the stacked predictions (or to the scalar potential),
so the sampling phase never touches the data.
"""
import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InvalidInputError, TrainingAbortError
from .optim import make_optimizer, minibatches
from .samplers import SamplerConfig, initial_state, run_chain

logger = logging.getLogger(__name__)

MODES = ("predictions", "scalar_potential")
MAX_REFERENCE = 512


@dataclass
class CalibrationSet:
    """Recorded calibration pairs.

    ``outputs`` is ``J x D`` with ``D = N_ref * q`` (row-major stack of the
    ``N_ref x q`` prediction matrix) in predictions mode, or ``J x 1`` holding
    ``Phi`` in scalar-potential mode.
    """

    thetas: np.ndarray
    outputs: np.ndarray
    ref_indices: np.ndarray
    mode: str = "predictions"
    potentials: np.ndarray = None
    q: int = 1

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(self.thetas.shape[0], -1)
        self.ref_indices = np.asarray(self.ref_indices, dtype=int)
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown calibration mode {self.mode!r}")
        if self.thetas.shape[0] < 2:
            raise InvalidInputError("a calibration set needs J >= 2 pairs")
        if self.ref_indices.size == 0:
            raise InvalidInputError("reference set must be nonempty")

    @property
    def J(self):
        return self.thetas.shape[0]

    def to_csv(self, path):
        d, D = self.thetas.shape[1], self.outputs.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"theta_{i}" for i in range(d)]
                       + [f"out_{k}" for k in range(D)])
            for j in range(self.J):
                w.writerow([j] + [repr(float(x)) for x in self.thetas[j]]
                           + [repr(float(x)) for x in self.outputs[j]])


@dataclass
class EmulatorSpec:
    """Emulator architecture and training settings.

    Dropout is applied to the network input and to the first hidden layer
    while training and switched off for prediction.
    """

    hidden_sizes: tuple = (8, 64, 32)
    activation: str = "relu"
    epochs: int = 1000
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    optimizer: str = "adam"
    validation_fraction: float = 0.2
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise InvalidInputError("learning_rate and batch_size must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InvalidInputError("validation_fraction must lie in (0, 1)")

    def mlp_spec(self, d, D):
        return nn.MlpSpec((d,) + self.hidden_sizes + (D,), self.activation)


@dataclass
class EmulatorModel:
    espec: EmulatorSpec
    net: nn.MlpSpec
    weights: np.ndarray
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray
    validation_sup_error: float = float("nan")
    train_seconds: float = 0.0
    mode: str = "predictions"
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def input_dim(self):
        return self.net.input_dim

    @property
    def output_dim(self):
        return self.net.output_dim

    @classmethod
    def from_weights(cls, net, weights, espec=None, mode="predictions"):
        """Emulator with identity standardisation around given network weights."""
        d, D = net.input_dim, net.output_dim
        return cls(espec or EmulatorSpec(hidden_sizes=net.layer_sizes[1:-1]), net,
                   np.asarray(weights, dtype=float), np.zeros(d), np.ones(d),
                   np.zeros(D), np.ones(D), mode=mode)

    def predict(self, theta):
        return emulate_forward(self, theta)


def emulate_forward(model, theta):
    """Deterministic emulator output (dropout off); vector of length ``D``.

    ``theta`` may also be a ``B x d`` batch, giving ``B x D``.
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    if theta.shape[-1] != model.input_dim:
        raise InvalidInputError(
            f"theta has length {theta.shape[-1]}, emulator expects {model.input_dim}")
    z = (theta.reshape(-1, model.input_dim) - model.in_shift) / model.in_scale
    out = nn.forward(model.net, model.weights, z) * model.out_scale + model.out_shift
    return out[0] if single else out


class EmulatedPotential:
    """``theta -> Phi_e(theta)`` built from an emulator (or any prediction map).

    Predictions mode evaluates ``0.5 * ||Y_ref - G_e(theta)||^2_Gamma * N / N_ref``;
    scalar mode returns the emulator output itself.
    """

    def __init__(self, emulator, Y_ref=None, noise=None, n_total=None, mode=None):
        self.emulator = emulator
        self.mode = mode or getattr(emulator, "mode", "predictions")
        if self.mode == "predictions":
            Y_ref = np.asarray(Y_ref, dtype=float)
            if Y_ref.ndim == 1:
                Y_ref = Y_ref.reshape(-1, 1)
            self.Y = Y_ref.ravel()
            self.inv_g = np.tile(1.0 / noise.expand(Y_ref.shape[1]), Y_ref.shape[0])
            n_ref = Y_ref.shape[0]
            self.scale = 1.0 if n_total is None or n_total == n_ref else n_total / n_ref

    def _predict(self, theta):
        e = self.emulator
        return e.predict(theta) if hasattr(e, "predict") else e(theta)

    def __call__(self, theta):
        out = np.asarray(self._predict(theta), dtype=float).ravel()
        if self.mode == "scalar_potential":
            return float(out[0])
        r = out - self.Y
        phi = 0.5 * float(np.sum(r * r * self.inv_g))
        return phi * self.scale if self.scale != 1.0 else phi

    def grad(self, theta):
        """Gradient by backpropagation through the emulator network."""
        m = self.emulator
        if not isinstance(m, EmulatorModel):
            raise InvalidInputError("gradient needs a trained EmulatorModel")
        z = ((np.asarray(theta, dtype=float) - m.in_shift) / m.in_scale).reshape(1, -1)
        out = nn.forward(m.net, m.weights, z)[0] * m.out_scale + m.out_shift
        if self.mode == "scalar_potential":
            g_out = m.out_scale.reshape(1, -1)
        else:
            g_out = ((out - self.Y) * self.inv_g * self.scale * m.out_scale).reshape(1, -1)
        return _input_grad(m, z, g_out) / m.in_scale


def _input_grad(model, z, g_out):
    """d(g_out . net(z)) / dz for one input row."""
    layers, acts, pre = nn._forward_cache(model.net, model.weights, z)
    g = g_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        g = g @ W
        if i > 0:
            g = nn._act_grad(model.net.activations[i - 1], pre[i - 1], acts[i], g)
    return g[0]


def emulated_potential(model, theta, Y_ref, noise, n_total=None):
    return EmulatedPotential(model, Y_ref, noise, n_total)(theta)


def choose_reference(n_train, rng, max_size=MAX_REFERENCE):
    if n_train <= max_size:
        return np.arange(n_train)
    return np.sort(rng.choice(n_train, max_size, replace=False))


def collect_calibration(model, kernel, J, config, rng, ref_indices=None, mode="predictions",
                        target=None, init=None):
    """Short early-stopped chain producing ``J`` calibration pairs.

    Parameters
    ----------
    model : nn.BnnModel
    kernel : {"sghmc", "pcn"}
    J : int
        Recorded iterations (``config.thinning`` kernel steps each).
    config : SamplerConfig
    rng : numpy.random.Generator
    ref_indices : array, optional
        Training rows whose predictions are recorded; default is a random
        subset of at most 512 rows.

    Returns
    -------
    (CalibrationSet, ChainState, ChainTrace)
        The final chain state is the starting point for the sampling phase.
    """
    if J < 2:
        raise InvalidInputError("J must be >= 2")
    if kernel not in ("sghmc", "pcn"):
        raise InvalidInputError("calibration kernel must be 'sghmc' or 'pcn'")
    if mode not in MODES:
        raise InvalidInputError(f"unknown calibration mode {mode!r}")
    if ref_indices is None:
        ref_indices = choose_reference(model.n_data, rng)
    ref_indices = np.asarray(ref_indices, dtype=int)
    if ref_indices.size == 0 or ref_indices.min() < 0 or ref_indices.max() >= model.n_data:
        raise InvalidInputError("ref_indices must be a nonempty subset of the training rows")
    from .ces import make_target
    target = target or make_target(model)
    cfg = SamplerConfig(**{**config.__dict__, "iterations": J})
    if init is None:
        init = model.prior.sample(model.dim, rng)
    trace = run_chain(initial_state(kernel, init, target) if not hasattr(init, "theta") else init,
                      kernel, cfg, target, rng, prior=model.prior, record=target.potential)
    X_ref = model.X[ref_indices]
    if mode == "predictions":
        outputs = np.stack([nn.forward(model.spec, th, X_ref).ravel() for th in trace.samples])
    else:
        outputs = trace.potentials.reshape(-1, 1).copy()
    cal = CalibrationSet(trace.samples.copy(), outputs, ref_indices, mode,
                         potentials=trace.potentials.copy(), q=model.spec.output_dim)
    return cal, trace.final_state, trace


def _dropout_masks(rng, n, widths, rate):
    keep = 1.0 - rate
    return {i: (rng.random((n, w)) < keep) / keep for i, w in enumerate(widths)}


def train_emulator(cal, espec, rng=None):
    """Fit an emulator on a calibration set.

    Pairs are split 80/20 (``espec.validation_fraction``) into fitting and
    validation sets; the network is trained by minibatch gradient steps on
    the mean squared error of standardised outputs, with dropout on the
    input and the first hidden layer. ``validation_sup_error`` is the largest
    absolute output error on held-out pairs, in original units. Output
    columns that are constant over the fitting pairs get a zero output scale,
    so the emulator returns that constant exactly.
    """
    if cal.J < 10:
        raise InvalidInputError("training an emulator needs J >= 10 pairs")
    rng = rng if rng is not None else np.random.default_rng(espec.seed)
    t0 = time.perf_counter()
    thetas, outputs = cal.thetas, cal.outputs
    perm = rng.permutation(cal.J)
    n_val = max(1, int(round(espec.validation_fraction * cal.J)))
    val, fit = perm[:n_val], perm[n_val:]
    Xf, Yf = thetas[fit], outputs[fit]
    d, D = thetas.shape[1], outputs.shape[1]
    if espec.standardize:
        in_shift, in_scale = Xf.mean(axis=0), Xf.std(axis=0)
        out_shift, out_scale = Yf.mean(axis=0), Yf.std(axis=0)
        in_scale = np.where(in_scale > 1e-12, in_scale, 1.0)
        # a column with no spread is reproduced exactly: train on zeros, predict the mean
        flat = out_scale <= 1e-12 * np.maximum(1.0, np.abs(out_shift))
        out_scale = np.where(flat, 1.0, out_scale)
    else:
        in_shift, in_scale = np.zeros(d), np.ones(d)
        out_shift, out_scale = np.zeros(D), np.ones(D)
        flat = np.zeros(D, dtype=bool)
    Zf = (Xf - in_shift) / in_scale
    Tf = (Yf - out_shift) / out_scale
    net = espec.mlp_spec(d, D)
    w = nn.init_params(net, rng)
    opt = make_optimizer(espec.optimizer, espec.learning_rate)
    widths = [d, net.layer_sizes[1]] if len(net.layer_sizes) > 2 else [d]
    history = []
    for epoch in range(espec.epochs):
        total = 0.0
        for b in minibatches(fit.size, espec.batch_size, rng):
            keep = _dropout_masks(rng, b.size, widths, espec.dropout_rate) \
                if espec.dropout_rate > 0 else None
            layers, acts, pre = nn._forward_cache(net, w, Zf[b], keep)
            r = acts[-1] - Tf[b]
            loss = float(np.mean(r * r))
            if not np.isfinite(loss):
                raise TrainingAbortError(f"non-finite emulator loss at epoch {epoch}", epoch)
            g_out = 2.0 * r / r.size
            if keep:
                g = nn._backward_masked(net, layers, acts, pre, g_out, False, keep)
            else:
                g = nn._backward(net, layers, acts, pre, g_out)
            w = opt.step(w, g)
            total += loss * b.size
        history.append(total / fit.size)
    model = EmulatorModel(espec, net, w, in_shift, in_scale, out_shift,
                          np.where(flat, 0.0, out_scale), mode=cal.mode, loss_history=history)
    pred = emulate_forward(model, thetas[val])
    model.validation_sup_error = float(np.max(np.abs(pred - outputs[val])))
    model.train_seconds = time.perf_counter() - t0
    logger.info("emulator trained: %d pairs, val sup error %.4g, %.2fs",
                fit.size, model.validation_sup_error, model.train_seconds)
    return model
