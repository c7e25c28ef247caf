"""MCMC kernels (random-walk MH, HMC, SGHMC, pCN) and a chain runner.

Kernels are written against :class:`PotentialTarget`, which keeps the data
potential ``Phi`` (used by pCN, whose proposal already preserves the Gaussian
prior) apart from the full negative log-posterior ``U`` (used by MH, HMC and
SGHMC).
"""
import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ChainAbortError, InvalidInputError
from .nn import GaussianPrior

logger = logging.getLogger(__name__)

KERNELS = ("mh", "hmc", "sghmc", "pcn")
DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class PotentialTarget:
    """Callbacks describing a sampling target.

    Attributes
    ----------
    potential : callable
        ``theta -> Phi(theta)``, the likelihood potential (pCN).
    dim : int
        Parameter dimension.
    neg_log_post : callable, optional
        ``theta -> U(theta)``; MH and HMC use this.
    grad : callable, optional
        ``theta -> grad U(theta)``.
    stochastic_grad : callable, optional
        ``(theta, batch_indices) -> unbiased estimate of grad U``.
    n_data : int
        Number of data rows that minibatches are drawn from.
    """

    potential: Callable
    dim: int
    neg_log_post: Optional[Callable] = None
    grad: Optional[Callable] = None
    stochastic_grad: Optional[Callable] = None
    n_data: int = 0


@dataclass
class ChainState:
    theta: np.ndarray
    potential_value: float
    momentum: Optional[np.ndarray] = None


@dataclass
class SamplerConfig:
    """Hyperparameters for every kernel plus run-level settings.

    ``thinning`` kernel steps are taken per recorded sample. ``batch_size=None``
    means full-batch gradients for SGHMC.
    """

    iterations: int = 2000
    thinning: int = 1
    seed: int = 0
    burn_in: float = 0.1
    mh_step: float = 0.1
    hmc_eps: float = 0.1
    hmc_steps: int = 10
    sghmc_lr: float = 1e-3
    sghmc_friction: float = 0.1
    batch_size: Optional[int] = None
    pcn_beta: float = 0.1

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if self.thinning < 1:
            raise InvalidInputError("thinning must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise InvalidInputError("burn_in must be a fraction in [0, 1)")
        if self.mh_step <= 0 or self.hmc_eps <= 0 or self.sghmc_lr <= 0:
            raise InvalidInputError("step sizes must be positive")
        if self.hmc_steps < 1:
            raise InvalidInputError("hmc_steps must be >= 1")
        if not 0.0 <= self.sghmc_friction < 1.0:
            raise InvalidInputError("sghmc_friction must lie in [0, 1)")
        if not 0.0 < self.pcn_beta <= 1.0:
            raise InvalidInputError("pcn_beta must lie in (0, 1]")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive")


@dataclass
class ChainTrace:
    samples: np.ndarray
    potentials: np.ndarray
    accepted: np.ndarray
    wall_times: np.ndarray
    sampler_tag: str
    n_steps: int = 0
    n_accepted: int = 0
    n_divergent: int = 0
    n_nonfinite: int = 0
    final_state: Optional[ChainState] = field(default=None, repr=False)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_steps if self.n_steps else float("nan")

    @property
    def total_seconds(self):
        return float(self.wall_times[-1]) if len(self) else 0.0

    def head(self, n):
        """First ``n`` recorded samples as a new trace."""
        return replace(self, samples=self.samples[:n], potentials=self.potentials[:n],
                       accepted=self.accepted[:n], wall_times=self.wall_times[:n])

    def after_burn_in(self, fraction):
        n = len(self)
        start = min(int(np.floor(fraction * n)), max(n - 1, 0))
        return self.samples[start:]

    def shift_times(self, offset):
        """Trace with ``offset`` seconds added to every wall time."""
        return replace(self, wall_times=self.wall_times + offset)

    def to_csv(self, path):
        d = self.dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "wall_time", "potential", "accepted"]
                       + [f"theta_{i}" for i in range(d)])
            for i in range(len(self)):
                w.writerow([i, repr(float(self.wall_times[i])), repr(float(self.potentials[i])),
                            int(self.accepted[i])]
                           + [repr(float(x)) for x in self.samples[i]])

    @classmethod
    def from_csv(cls, path, sampler_tag="unknown"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(samples=data[:, 4:].copy(), potentials=data[:, 2].copy(),
                   accepted=data[:, 3].astype(bool), wall_times=data[:, 1].copy(),
                   sampler_tag=sampler_tag)


def _require(fn, what, kernel):
    if fn is None:
        raise InvalidInputError(f"{kernel} needs target.{what}")
    return fn


def mh_step(state, target, step_scale, rng):
    """Gaussian random-walk Metropolis step on ``U``.

    Returns ``(new_state, accepted)``. A non-finite proposal is rejected.
    """
    if step_scale <= 0:
        raise InvalidInputError("step_scale must be positive")
    U = _require(target.neg_log_post, "neg_log_post", "mh")
    prop = state.theta + step_scale * rng.standard_normal(state.theta.shape)
    u_prop = U(prop)
    log_u = np.log(rng.random())
    if not np.isfinite(u_prop):
        return state, False
    if log_u < state.potential_value - u_prop:
        return ChainState(prop, float(u_prop)), True
    return state, False


def leapfrog(theta, p, grad, eps, n_steps):
    g = grad(theta)
    p = p - 0.5 * eps * g
    for i in range(n_steps):
        theta = theta + eps * p
        g = grad(theta)
        if i < n_steps - 1:
            p = p - eps * g
    p = p - 0.5 * eps * g
    return theta, p


def hmc_step(state, target, eps, n_leapfrog, rng):
    """One HMC transition with unit mass matrix.

    Returns ``(new_state, accepted, divergent)``; the momentum is resampled
    each call and discarded afterwards.
    """
    U = _require(target.neg_log_post, "neg_log_post", "hmc")
    grad = _require(target.grad, "grad", "hmc")
    p0 = rng.standard_normal(state.theta.shape)
    log_u = np.log(rng.random())
    with np.errstate(over="ignore", invalid="ignore"):
        theta, p = leapfrog(state.theta, p0, grad, eps, n_leapfrog)
        u_new = U(theta) if np.all(np.isfinite(theta)) else np.inf
        h_old = state.potential_value + 0.5 * np.dot(p0, p0)
        h_new = u_new + 0.5 * np.dot(p, p)
    delta = h_new - h_old
    if not np.isfinite(delta) or abs(delta) > DIVERGENCE_THRESHOLD:
        return state, False, True
    if log_u < -delta:
        return ChainState(theta, float(u_new)), True, False
    return state, False, False


def sghmc_step(state, target, eta, alpha, batch, rng):
    """SGHMC update (no Metropolis correction).

    ``v <- (1 - alpha) v - eta * grad_est + N(0, 2 alpha eta)`` then
    ``theta <- theta + v``. ``batch=None`` uses the exact gradient.
    """
    if eta <= 0 or not 0.0 <= alpha < 1.0:
        raise InvalidInputError("need eta > 0 and alpha in [0, 1)")
    if batch is None:
        g = _require(target.grad, "grad", "sghmc")(state.theta)
    else:
        g = _require(target.stochastic_grad, "stochastic_grad", "sghmc")(state.theta, batch)
    v = state.momentum if state.momentum is not None else np.zeros_like(state.theta)
    v = (1.0 - alpha) * v - eta * g
    if alpha > 0:
        v = v + np.sqrt(2.0 * alpha * eta) * rng.standard_normal(v.shape)
    theta = state.theta + v
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(v))):
        raise ChainAbortError("non-finite SGHMC update")
    return ChainState(theta, float("nan"), v)


def pcn_step(state, target, beta, prior, rng):
    """Preconditioned Crank-Nicolson step.

    Proposal ``v = sqrt(1 - beta^2) u + beta xi`` with ``xi ~ N(0, C)``;
    acceptance uses the potential ``Phi`` only.
    """
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError("beta must lie in [0, 1]")
    xi = prior.std * rng.standard_normal(state.theta.shape)
    prop = np.sqrt(1.0 - beta * beta) * state.theta + beta * xi
    log_u = np.log(rng.random())
    phi_prop = target.potential(prop)
    if not np.isfinite(phi_prop):
        return state, False
    if log_u < state.potential_value - phi_prop:
        return ChainState(prop, float(phi_prop)), True
    return state, False


class _BatchStream:
    """Minibatch indices from successive random permutations (epochs)."""

    def __init__(self, n, size, rng):
        self.n, self.size, self.rng = n, size, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self):
        if self.pos + self.size > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        b = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return b


def initial_state(kernel, theta, target):
    theta = np.array(theta, dtype=float)
    if kernel == "pcn":
        return ChainState(theta, float(target.potential(theta)))
    if kernel in ("mh", "hmc"):
        U = _require(target.neg_log_post, "neg_log_post", kernel)
        return ChainState(theta, float(U(theta)))
    return ChainState(theta, float("nan"), np.zeros_like(theta))


def run_chain(init, kernel, config, target, rng, prior=None, record=None):
    """Run ``config.iterations`` recorded samples of ``kernel``.

    Parameters
    ----------
    init : array or ChainState
        Starting point (a state carries over SGHMC momentum).
    kernel : {"mh", "hmc", "sghmc", "pcn"}
    config : SamplerConfig
    target : PotentialTarget
    rng : numpy.random.Generator
    prior : GaussianPrior, optional
        Reference Gaussian for pCN (defaults to the unit prior).
    record : callable, optional
        ``theta -> float`` stored in ``potentials`` instead of the kernel's
        own energy (SGHMC carries none, so the runner records ``Phi`` there).

    Returns
    -------
    ChainTrace
    """
    if kernel not in KERNELS:
        raise InvalidInputError(f"unknown kernel {kernel!r}")
    prior = prior or GaussianPrior()
    state = init if isinstance(init, ChainState) else initial_state(kernel, init, target)
    if state.theta.size != target.dim:
        raise InvalidInputError(f"init has length {state.theta.size}, target dim {target.dim}")
    if kernel == "sghmc" and state.momentum is None:
        state = ChainState(state.theta, state.potential_value, np.zeros_like(state.theta))
    T, thin = config.iterations, config.thinning
    samples = np.empty((T, target.dim))
    pots = np.empty(T)
    acc = np.zeros(T, dtype=bool)
    times = np.empty(T)
    stats = {"n_steps": 0, "n_accepted": 0, "n_divergent": 0, "n_nonfinite": 0}

    batches = None
    if kernel == "sghmc" and config.batch_size is not None and config.batch_size < target.n_data:
        batches = _BatchStream(target.n_data, config.batch_size, rng)
    if record is None and kernel == "sghmc":
        record = target.potential

    def partial(n):
        return ChainTrace(samples[:n].copy(), pots[:n].copy(), acc[:n].copy(),
                          times[:n].copy(), kernel, final_state=state, **stats)

    t0 = time.perf_counter()
    for t in range(T):
        accepted = False
        for _ in range(thin):
            try:
                if kernel == "mh":
                    state, accepted = mh_step(state, target, config.mh_step, rng)
                elif kernel == "hmc":
                    state, accepted, div = hmc_step(state, target, config.hmc_eps,
                                                    config.hmc_steps, rng)
                    stats["n_divergent"] += div
                elif kernel == "pcn":
                    state, accepted = pcn_step(state, target, config.pcn_beta, prior, rng)
                else:
                    batch = batches.next() if batches is not None else None
                    state = sghmc_step(state, target, config.sghmc_lr,
                                       config.sghmc_friction, batch, rng)
                    accepted = True
            except ChainAbortError as exc:
                raise ChainAbortError(f"{kernel} chain aborted at sample {t}: {exc}",
                                      partial_trace=partial(t), step=t) from exc
            stats["n_steps"] += 1
            stats["n_accepted"] += bool(accepted)
        samples[t] = state.theta
        pots[t] = record(state.theta) if record is not None else state.potential_value
        if kernel == "sghmc" and not np.isfinite(pots[t]):
            stats["n_nonfinite"] += 1
        acc[t] = accepted
        times[t] = time.perf_counter() - t0
    return partial(T)


def spawn_rngs(root_seed, n):
    """Independent generators derived from one root seed by stream splitting."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(root_seed).spawn(n)]
