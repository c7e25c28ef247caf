"""Multilayer perceptron forward map, data potentials and Gaussian prior.

Parameters live in a single flat vector. Layout is layer-major and, inside a
layer, the weight matrix ``W`` of shape ``(d_out, d_in)`` (row-major) comes
before the bias ``b``. Every other module (calibration records, emulator
inputs, chain traces) relies on this layout.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, NumericOverflowError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
OUTPUT_ACTIVATIONS = ("identity", "softmax")
LIKELIHOODS = ("gaussian", "categorical")

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    Parameters
    ----------
    layer_sizes : tuple of int
        ``(d_0, ..., d_m)``; ``d_0`` is the input dimension, ``d_m`` the output.
    activations : tuple of str
        One tag per hidden layer. A single string is broadcast.
    output_activation : str
        ``"identity"`` or ``"softmax"``.
    """

    layer_sizes: tuple
    activations: tuple = ()
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidInputError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
        acts = self.activations
        n_hidden = len(sizes) - 2
        if isinstance(acts, str):
            acts = (acts,) * n_hidden
        acts = tuple(acts)
        if len(acts) == 1 and n_hidden > 1:
            acts = acts * n_hidden
        if len(acts) != n_hidden:
            raise InvalidInputError(
                f"need {n_hidden} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise InvalidInputError(f"unknown activation {a!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise InvalidInputError(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)

    @property
    def n_params(self):
        return param_count(self.layer_sizes)

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes),
                "activations": list(self.activations),
                "output_activation": self.output_activation}


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal observation covariance ``Gamma``."""

    gamma_diag: tuple

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma_diag, dtype=float))
        if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise InvalidInputError("gamma_diag must be a nonempty vector of positive reals")
        object.__setattr__(self, "gamma_diag", tuple(float(x) for x in g))

    @property
    def gamma(self):
        return np.asarray(self.gamma_diag)

    def expand(self, q):
        g = self.gamma
        if g.size == 1:
            return np.full(q, g[0])
        if g.size != q:
            raise InvalidInputError(f"noise has {g.size} entries, outputs have {q}")
        return g


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic prior ``N(0, variance * I)`` over the flat parameter vector."""

    variance: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidInputError("prior variance must be positive")

    @property
    def std(self):
        return float(np.sqrt(self.variance))

    def sample(self, dim, rng):
        return self.std * rng.standard_normal(dim)


def param_count(layer_sizes):
    return int(sum(layer_sizes[i] * layer_sizes[i - 1] + layer_sizes[i]
                   for i in range(1, len(layer_sizes))))


@lru_cache(maxsize=256)
def _layout(layer_sizes):
    out = []
    offset = 0
    for i in range(1, len(layer_sizes)):
        d_in, d_out = layer_sizes[i - 1], layer_sizes[i]
        w = slice(offset, offset + d_out * d_in)
        offset += d_out * d_in
        b = slice(offset, offset + d_out)
        offset += d_out
        out.append(((d_out, d_in), w, b))
    return tuple(out)


def unflatten(spec, theta):
    """Split a flat vector into ``[(W_1, b_1), ..., (W_m, b_m)]`` (views, no copy)."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != spec.n_params:
        raise InvalidInputError(
            f"theta has length {theta.size}, architecture needs {spec.n_params}")
    return [(theta[w].reshape(shape), theta[b]) for shape, w, b in _layout(spec.layer_sizes)]


def flatten(layers):
    return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])


def init_params(spec, rng, scale="glorot"):
    """Random initial parameters: Glorot-uniform weights and zero biases."""
    layers = []
    for (d_out, d_in), _, _ in _layout(spec.layer_sizes):
        if scale == "glorot":
            lim = np.sqrt(6.0 / (d_in + d_out))
            W = rng.uniform(-lim, lim, size=(d_out, d_in))
        else:
            W = float(scale) * rng.standard_normal((d_out, d_in))
        layers.append((W, np.zeros(d_out)))
    return flatten(layers)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    return g


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_x(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"X must have {spec.input_dim} columns, got shape {X.shape}")
    return X


def _offending_index(theta):
    bad = np.flatnonzero(~np.isfinite(theta))
    if bad.size:
        return int(bad[0])
    return int(np.argmax(np.abs(theta))) if theta.size else None


def _forward_cache(spec, theta, X, keep=None):
    """Forward pass keeping what backprop needs.

    ``keep`` maps a layer-input index (0 = network input, 1 = first hidden
    output, ...) to an inverted-dropout multiplier of matching shape.
    """
    layers = unflatten(spec, theta)
    X = _check_x(spec, X)
    acts = [X]
    pre = []
    a = X
    n_layers = len(layers)
    for i, (W, b) in enumerate(layers):
        if keep is not None and i in keep:
            a = a * keep[i]
            acts[-1] = a
        z = a @ W.T + b
        pre.append(z)
        if i < n_layers - 1:
            a = _act(spec.activations[i], z)
        elif spec.output_activation == "softmax":
            a = softmax(z)
        else:
            a = z
        acts.append(a)
    return layers, acts, pre


def forward(spec, theta, X, keep=None):
    """Evaluate the network ``G(X; theta)``; returns an ``N x d_m`` matrix."""
    with np.errstate(over="ignore", invalid="ignore"):
        _, acts, _ = _forward_cache(spec, theta, X, keep)
    return acts[-1]


def _backward(spec, layers, acts, pre, g_out, wrt_logits=False):
    """Reverse sweep; ``g_out`` is dLoss/dOutput (or dLoss/dLogits)."""
    grads = [None] * len(layers)
    g = g_out
    if spec.output_activation == "softmax" and not wrt_logits:
        p = acts[-1]
        g = p * (g - np.sum(g * p, axis=1, keepdims=True))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        if i == 0:
            break
        g = _act_grad(spec.activations[i - 1], pre[i - 1], acts[i], g @ W)
    return flatten(grads)


def _backward_masked(spec, layers, acts, pre, g_out, wrt_logits, keep):
    grads = [None] * len(layers)
    g = g_out
    if spec.output_activation == "softmax" and not wrt_logits:
        p = acts[-1]
        g = p * (g - np.sum(g * p, axis=1, keepdims=True))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        if i == 0:
            break
        g = g @ W
        if i in keep:
            g = g * keep[i]
        z = pre[i - 1]
        g = _act_grad(spec.activations[i - 1], z, _act(spec.activations[i - 1], z), g)
    return flatten(grads)


def backprop(spec, theta, X, g_out, keep=None, wrt_logits=False):
    """Vector-Jacobian product ``g_out^T dG/dtheta`` for a batch."""
    layers, acts, pre = _forward_cache(spec, theta, X, keep)
    if keep:
        return _backward_masked(spec, layers, acts, pre, g_out, wrt_logits, keep)
    return _backward(spec, layers, acts, pre, g_out, wrt_logits)


def per_example_grads(spec, theta, X, g_out, wrt_logits=False):
    """Per-row vector-Jacobian products, shape ``N x d``."""
    layers, acts, pre = _forward_cache(spec, theta, X)
    n = acts[0].shape[0]
    g = g_out
    if spec.output_activation == "softmax" and not wrt_logits:
        p = acts[-1]
        g = p * (g - np.sum(g * p, axis=1, keepdims=True))
    blocks = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gw = np.einsum("no,ni->noi", g, acts[i]).reshape(n, -1)
        blocks[i] = np.concatenate([gw, g], axis=1)
        if i == 0:
            break
        g = _act_grad(spec.activations[i - 1], pre[i - 1], acts[i], g @ W)
    return np.concatenate(blocks, axis=1)


def _targets(Y, q):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1) if q == 1 else Y.reshape(1, -1)
    return Y


def _residual_terms(spec, theta, X, Y, noise, likelihood):
    """Return (potential, dPhi/dOutput-or-logits, wrt_logits, cache)."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        layers, acts, pre = _forward_cache(spec, theta, X)
        out = acts[-1]
        Y = _targets(Y, spec.output_dim)
        if Y.shape != out.shape:
            raise InvalidInputError(f"Y shape {Y.shape} does not match output {out.shape}")
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError("non-finite network output", _offending_index(theta))
        if likelihood == "gaussian":
            inv_g = 1.0 / noise.expand(out.shape[1])
            r = out - Y
            phi = 0.5 * float(np.sum(r * r * inv_g))
            return phi, r * inv_g, False, (layers, acts, pre)
        if likelihood == "categorical":
            if spec.output_activation != "softmax":
                raise InvalidInputError("categorical likelihood needs a softmax output")
            p = np.maximum(out, PROB_FLOOR)
            phi = -float(np.sum(Y * np.log(p)))
            # softmax + cross-entropy: gradient w.r.t. logits is p - y for one-hot rows
            g = out * Y.sum(axis=1, keepdims=True) - Y
            return phi, g, True, (layers, acts, pre)
    raise InvalidInputError(f"unknown likelihood {likelihood!r}")


def potential(spec, theta, X, Y, noise, likelihood="gaussian"):
    """Data misfit ``Phi(theta)``.

    Gaussian mode is ``0.5 * sum_n r_n^T Gamma^{-1} r_n``; categorical mode is
    the cross-entropy of softmax outputs against one-hot targets.
    """
    if np.asarray(X).shape[0] == 0:
        raise InvalidInputError("data must be nonempty")
    return _residual_terms(spec, theta, X, Y, noise, likelihood)[0]


def potential_and_grad(spec, theta, X, Y, noise, likelihood="gaussian"):
    if np.asarray(X).shape[0] == 0:
        raise InvalidInputError("data must be nonempty")
    phi, g, wrt_logits, (layers, acts, pre) = _residual_terms(
        spec, theta, X, Y, noise, likelihood)
    return phi, _backward(spec, layers, acts, pre, g, wrt_logits)


def grad_potential(spec, theta, X, Y, noise, likelihood="gaussian"):
    return potential_and_grad(spec, theta, X, Y, noise, likelihood)[1]


def minibatch_grad_potential(spec, theta, X, Y, noise, batch, rescale=True,
                             likelihood="gaussian"):
    """Gradient of the potential over ``batch`` rows.

    With ``rescale`` the result is multiplied by ``N / len(batch)`` so it is an
    unbiased estimate of the full gradient under uniform batch sampling.
    """
    batch = np.asarray(batch, dtype=int).ravel()
    if batch.size == 0:
        raise InvalidInputError("empty minibatch")
    X = np.asarray(X)
    g = grad_potential(spec, theta, X[batch], np.asarray(Y)[batch], noise, likelihood)
    if rescale:
        g = g * (X.shape[0] / batch.size)
    return g


def log_prior(theta, prior):
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    return float(-0.5 * d * np.log(2 * np.pi * prior.variance)
                 - 0.5 * np.dot(theta, theta) / prior.variance)


def grad_log_prior(theta, prior):
    return -np.asarray(theta, dtype=float) / prior.variance


def neg_log_posterior(spec, theta, X, Y, noise, prior, likelihood="gaussian"):
    """``Phi(theta) - log p(theta)``; the target for MH, HMC and SGHMC."""
    return potential(spec, theta, X, Y, noise, likelihood) - log_prior(theta, prior)


@dataclass
class BnnModel:
    """A network bound to its training data, noise model and prior.

    Convenience wrapper so samplers and baselines can call ``model.potential(theta)``
    and friends without re-threading every argument.
    """

    spec: MlpSpec
    X: np.ndarray
    Y: np.ndarray
    noise: NoiseModel
    prior: GaussianPrior = field(default_factory=GaussianPrior)
    likelihood: str = "gaussian"

    def __post_init__(self):
        self.X = _check_x(self.spec, self.X)
        self.Y = _targets(self.Y, self.spec.output_dim)
        if self.X.shape[0] == 0:
            raise InvalidInputError("training data must be nonempty")
        if self.likelihood not in LIKELIHOODS:
            raise InvalidInputError(f"unknown likelihood {self.likelihood!r}")

    @property
    def dim(self):
        return self.spec.n_params

    @property
    def n_data(self):
        return self.X.shape[0]

    def predict(self, theta, X=None):
        return forward(self.spec, theta, self.X if X is None else X)

    def potential(self, theta):
        return potential(self.spec, theta, self.X, self.Y, self.noise, self.likelihood)

    def grad_potential(self, theta):
        return grad_potential(self.spec, theta, self.X, self.Y, self.noise, self.likelihood)

    def neg_log_posterior(self, theta):
        return self.potential(theta) - log_prior(theta, self.prior)

    def grad_neg_log_posterior(self, theta):
        return self.grad_potential(theta) - grad_log_prior(theta, self.prior)

    def stochastic_grad_neg_log_posterior(self, theta, batch):
        g = minibatch_grad_potential(self.spec, theta, self.X, self.Y, self.noise, batch,
                                     rescale=True, likelihood=self.likelihood)
        return g - grad_log_prior(theta, self.prior)
