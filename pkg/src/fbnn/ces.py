"""Calibrate-emulate-sample pipeline, full-BNN MCMC baselines and predictive summaries."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .diagnostics import PredictiveSummary
from .emulator import (EmulatedPotential, EmulatorSpec, collect_calibration, train_emulator)
from .errors import FbnnError, InvalidInputError, PhaseError
from .samplers import PotentialTarget, SamplerConfig, initial_state, run_chain

logger = logging.getLogger(__name__)

SAMPLING_KERNELS = ("sghmc", "pcn")
BETA_RULES = ("spread", "grid", "fixed")
BETA_GRID = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005, 0.0002, 0.0001)


@dataclass(frozen=True)
class FbnnVariant:
    calibration_kernel: str = "sghmc"
    sampling_kernel: str = "pcn"

    def __post_init__(self):
        for k in (self.calibration_kernel, self.sampling_kernel):
            if k not in SAMPLING_KERNELS:
                raise InvalidInputError(f"FBNN kernels must be sghmc or pcn, got {k!r}")

    @property
    def name(self):
        return f"fbnn-{self.calibration_kernel}-{self.sampling_kernel}"

    @classmethod
    def parse(cls, method):
        parts = method.split("-")
        if len(parts) != 3 or parts[0] != "fbnn":
            raise InvalidInputError(f"not an FBNN method: {method!r}")
        return cls(parts[1], parts[2])


@dataclass
class ExperimentResult:
    method: str
    trace: object = None
    emulator: object = None
    calibration: object = None
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    samples: np.ndarray = None


def make_target(model):
    """Sampling target over the true data potential of a :class:`nn.BnnModel`."""
    return PotentialTarget(potential=model.potential, dim=model.dim,
                           neg_log_post=model.neg_log_posterior,
                           grad=model.grad_neg_log_posterior,
                           stochastic_grad=model.stochastic_grad_neg_log_posterior,
                           n_data=model.n_data)


def make_emulated_target(phi_e, prior):
    def U(theta):
        return phi_e(theta) - nn.log_prior(theta, prior)

    grad = None
    if hasattr(phi_e, "grad"):
        def grad(theta):
            return phi_e.grad(theta) - nn.grad_log_prior(theta, prior)

    dim = phi_e.emulator.input_dim if hasattr(phi_e.emulator, "input_dim") else None
    return PotentialTarget(potential=phi_e, dim=dim, neg_log_post=U, grad=grad)


def tune_pcn_beta(target, state, prior, rng, grid=BETA_GRID, pilot=200, goal=0.25):
    """Pick ``beta`` from a fixed grid by short pilot runs.

    Returns ``(beta, {beta: acceptance})``; the grid is scanned from large to
    small and stops once acceptance passes ``goal``.
    """
    rates = {}
    for beta in sorted(grid, reverse=True):
        cfg = SamplerConfig(iterations=pilot, pcn_beta=beta)
        tr = run_chain(state, "pcn", cfg, target, rng, prior=prior)
        rates[beta] = tr.acceptance_rate
        if tr.acceptance_rate >= goal:
            break
    best = min(rates, key=lambda b: abs(rates[b] - goal))
    return best, rates


def spread_beta(thetas, T, prior, factor=0.5, quantile=0.1):
    """Step size that keeps a ``T``-step pCN walk inside the calibration cloud.

    ``s`` is the ``quantile`` of the per-coordinate spread over the second
    half of the calibration draws, and ``beta = factor * s / (sigma * sqrt(T))``,
    so the random-walk displacement over the whole run stays below ``s``.
    A low quantile is used because the tightly determined coordinates are
    the ones where emulator error moves the predictions most.
    """
    thetas = np.atleast_2d(thetas)
    late = thetas[thetas.shape[0] // 2:]
    s = float(np.quantile(late.std(axis=0), quantile)) if late.shape[0] > 1 else 0.0
    if s <= 0:
        return BETA_GRID[-1]
    return float(min(1.0, factor * s / (prior.std * np.sqrt(T))))


def run_full_bnn(model, kernel, T, config, rng, init=None):
    """Plain MCMC on the true potential for ``T`` recorded samples from a prior draw."""
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if kernel not in SAMPLING_KERNELS + ("mh", "hmc"):
        raise InvalidInputError(f"unknown kernel {kernel!r}")
    target = make_target(model)
    if init is None:
        init = model.prior.sample(model.dim, rng)
    cfg = SamplerConfig(**{**config.__dict__, "iterations": T})
    t0 = time.perf_counter()
    trace = run_chain(init, kernel, cfg, target, rng, prior=model.prior,
                      record=target.potential)
    total = time.perf_counter() - t0
    return ExperimentResult(f"bnn-{kernel}", trace=trace, samples=trace.samples,
                            timings={"seconds_calibration": 0.0, "seconds_training": 0.0,
                                     "seconds_sampling": total, "seconds_total": total},
                            extra={"acceptance_rate": trace.acceptance_rate})


def run_fbnn(model, variant, J, T, calib_config, sample_config, espec, rng,
             ref_indices=None, mode="predictions", emulator=None, beta_rule="spread"):
    """Calibrate with a short chain, fit an emulator, then sample on ``Phi_e``.

    ``rng`` is split into three independent streams (calibration, emulator
    training, sampling). Passing ``emulator`` skips training and uses that
    object (anything with ``predict(theta)``) in place of the fitted network.

    ``beta_rule`` picks the pCN step: ``"spread"`` (:func:`spread_beta`),
    ``"grid"`` (:func:`tune_pcn_beta` on the emulated potential) or
    ``"fixed"`` (``sample_config.pcn_beta`` as given).

    Returns
    -------
    ExperimentResult
        With per-phase timings ``seconds_{calibration,training,sampling,total}``.
    """
    if T < 1:
        raise InvalidInputError("T must be >= 1 sampling iterations")
    if J < 2:
        raise InvalidInputError("J must be >= 2")
    if beta_rule not in BETA_RULES:
        raise InvalidInputError(f"unknown beta_rule {beta_rule!r}")
    espec = espec or EmulatorSpec()
    cal_rng, train_rng, sample_rng = rng.spawn(3)
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    try:
        cal, last_state, _ = collect_calibration(model, variant.calibration_kernel, J,
                                                 calib_config, cal_rng, ref_indices, mode)
    except FbnnError as exc:
        raise PhaseError("calibration", exc) from exc
    t_cal = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        if emulator is None:
            emulator = train_emulator(cal, espec, train_rng)
    except FbnnError as exc:
        raise PhaseError("training", exc) from exc
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        Y_ref = model.Y[cal.ref_indices]
        phi_e = EmulatedPotential(emulator, Y_ref, model.noise, model.n_data, mode)
        target = make_emulated_target(phi_e, model.prior)
        target.dim = model.dim
        kernel = variant.sampling_kernel
        cfg = SamplerConfig(**{**sample_config.__dict__, "iterations": T})
        extra = {}
        if kernel == "pcn":
            state = initial_state("pcn", last_state.theta, target)
            if beta_rule == "spread":
                cfg.pcn_beta = spread_beta(cal.thetas, T, model.prior)
            elif beta_rule == "grid":
                beta, rates = tune_pcn_beta(target, state, model.prior, sample_rng)
                cfg.pcn_beta = beta
                extra["beta_sweep"] = {str(k): v for k, v in rates.items()}
            extra["pcn_beta"] = cfg.pcn_beta
        else:
            # exact emulator gradient, no minibatching: the emulator bypasses the data
            cfg.batch_size = None
            state = initial_state("sghmc", last_state.theta, target)
        trace = run_chain(state, kernel, cfg, target, sample_rng, prior=model.prior,
                          record=phi_e)
    except FbnnError as exc:
        raise PhaseError("sampling", exc) from exc
    t_samp = time.perf_counter() - t0
    total = time.perf_counter() - t_start
    extra["acceptance_rate"] = trace.acceptance_rate
    extra["emulator_val_sup_error"] = float(getattr(emulator, "validation_sup_error", np.nan))
    return ExperimentResult(variant.name, trace=trace, emulator=emulator, calibration=cal,
                            samples=trace.samples,
                            timings={"seconds_calibration": t_cal, "seconds_training": t_train,
                                     "seconds_sampling": t_samp, "seconds_total": total},
                            extra=extra)


def predictive_from_draws(draws, task, noise=None, rng=None, level=0.95, min_noise_draws=1000):
    """Summarise per-sample network outputs ``(S, N, q)``.

    Regression intervals add ``N(0, Gamma)`` noise draws (at least
    ``min_noise_draws`` in total) so they cover observed responses; the
    interval is the central ``level`` percentile range.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[..., None]
    S = draws.shape[0]
    if S == 0:
        raise InvalidInputError("no posterior draws")
    a = 100 * (1 - level) / 2
    mean = draws.mean(axis=0)
    if task == "regression" and noise is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        reps = max(1, int(np.ceil(min_noise_draws / S)))
        sd = np.sqrt(noise.expand(draws.shape[2]))
        noisy = np.repeat(draws, reps, axis=0)
        noisy = noisy + sd * rng.standard_normal(noisy.shape)
        lo, hi = np.percentile(noisy, [a, 100 - a], axis=0)
    else:
        lo, hi = np.percentile(draws, [a, 100 - a], axis=0)
    return PredictiveSummary(mean, lo, hi, task, draws)


def posterior_predictive(spec, samples, X_test, noise=None, task="regression",
                         burn_in=0.1, rng=None, max_samples=None):
    """Predictive summary from parameter samples (a trace or an ``S x d`` array).

    The first ``burn_in`` fraction is dropped (at least one sample is kept).
    """
    thetas = samples.samples if hasattr(samples, "samples") else np.asarray(samples, float)
    thetas = np.atleast_2d(thetas)
    if thetas.shape[0] == 0:
        raise InvalidInputError("empty trace")
    start = min(int(np.floor(burn_in * thetas.shape[0])), thetas.shape[0] - 1)
    thetas = thetas[start:]
    if max_samples is not None and thetas.shape[0] > max_samples:
        idx = np.linspace(0, thetas.shape[0] - 1, max_samples).round().astype(int)
        thetas = thetas[idx]
    draws = np.stack([nn.forward(spec, th, X_test) for th in thetas])
    return predictive_from_draws(draws, task, noise if task == "regression" else None, rng)
