"""Non-CES comparison methods.

Point-estimate DNN, deep ensembles, mean-field variational inference,
diagonal Laplace (plus an L1-penalised "lasso" variant), MC-Dropout and
diagonal SWAG. Every method ends in a stack of posterior (or pseudo-posterior)
draws so the same predictive summaries and metrics apply to all of them.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import nn
from .errors import FbnnError, InvalidInputError, TrainingAbortError
from .optim import make_optimizer, minibatches

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e10


def _check_epochs(epochs):
    if epochs < 0:
        raise InvalidInputError("epochs must be >= 0")


def train_point_dnn(model, epochs, lr, rng, batch_size=32, optimizer="adam", init=None,
                    weight_decay=False, snapshot=None):
    """Minibatch gradient descent on the mean data potential.

    The loss is ``Phi(theta) / N`` (plus ``-log p(theta) / N`` when
    ``weight_decay`` is set). ``snapshot(epoch, theta)`` is called after every
    epoch if given.

    Raises
    ------
    TrainingAbortError
        If the minibatch loss exceeds 1e10 or is not finite.
    """
    _check_epochs(epochs)
    theta = nn.init_params(model.spec, rng) if init is None else np.array(init, dtype=float)
    opt = make_optimizer(optimizer, lr)
    n = model.n_data
    bs = min(batch_size, n)
    for epoch in range(epochs):
        for b in minibatches(n, bs, rng):
            phi, g = nn.potential_and_grad(model.spec, theta, model.X[b], model.Y[b],
                                           model.noise, model.likelihood)
            loss = phi / b.size
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingAbortError(f"training diverged at epoch {epoch} (loss {loss:.3g})",
                                         epoch)
            g = g / b.size
            if weight_decay:
                g = g - nn.grad_log_prior(theta, model.prior) / n
            theta = opt.step(theta, g)
        if snapshot is not None:
            snapshot(epoch, theta)
    return theta


def run_ensemble(model, M=5, epochs=100, lr=1e-3, root_seed=0, **train_kw):
    """Train ``M`` networks from independently seeded initialisations.

    Members that fail are logged and dropped; at least two must survive.

    Returns
    -------
    list of ndarray
        One parameter vector per surviving member.
    """
    if M < 2:
        raise InvalidInputError("an ensemble needs M >= 2 members")
    members = []
    for i, child in enumerate(np.random.SeedSequence(root_seed).spawn(M)):
        try:
            members.append(train_point_dnn(model, epochs, lr, np.random.default_rng(child),
                                           **train_kw))
        except FbnnError as exc:
            logger.warning("ensemble member %d failed: %s", i, exc)
    if len(members) < 2:
        raise TrainingAbortError(f"only {len(members)} of {M} ensemble members finished", -1)
    return members


# mean-field variational inference

@dataclass
class VariationalState:
    """Diagonal Gaussian ``q(theta) = N(mu, diag(exp(log_sigma))^2)``."""

    mu: np.ndarray
    log_sigma: np.ndarray
    prior: nn.GaussianPrior

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.log_sigma = np.asarray(self.log_sigma, dtype=float)
        if self.mu.shape != self.log_sigma.shape:
            raise InvalidInputError("mu and log_sigma must have the same shape")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.log_sigma))):
            raise InvalidInputError("variational parameters must be finite")

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    def sample(self, n, rng):
        return self.mu + self.sigma * rng.standard_normal((n, self.mu.size))


def kl_divergence(vstate):
    """Closed-form ``KL(q || N(0, s^2 I))`` for a diagonal Gaussian ``q``."""
    s2 = vstate.prior.variance
    var = np.exp(2.0 * vstate.log_sigma)
    return float(0.5 * np.sum(var / s2 + vstate.mu ** 2 / s2 - 1.0 - np.log(var / s2)))


def elbo_and_grad(vstate, model, mc_draws=1, rng=None, z=None):
    """Reparameterised Monte Carlo ELBO and its gradient.

    ``E_q[-Phi(W)] - KL(q || prior)`` with ``W = mu + sigma * z``. Pass ``z``
    (``mc_draws x d``) to reuse common random numbers. ``model=None`` drops
    the likelihood term.

    Returns
    -------
    elbo : float
    grads : tuple of ndarray
        ``(d elbo / d mu, d elbo / d log_sigma)``.
    """
    if mc_draws < 1:
        raise InvalidInputError("mc_draws must be >= 1")
    d = vstate.mu.size
    if z is None:
        z = rng.standard_normal((mc_draws, d))
    z = np.atleast_2d(z)
    sigma = vstate.sigma
    s2 = vstate.prior.variance
    ll = 0.0
    g_mu = np.zeros(d)
    g_ls = np.zeros(d)
    if model is not None:
        for k, zk in enumerate(z):
            w = vstate.mu + sigma * zk
            phi, g = nn.potential_and_grad(model.spec, w, model.X, model.Y, model.noise,
                                           model.likelihood)
            if not np.isfinite(phi):
                raise TrainingAbortError(f"non-finite likelihood at draw {k}", k)
            ll -= phi
            g_mu -= g
            g_ls -= g * sigma * zk
        m = z.shape[0]
        ll, g_mu, g_ls = ll / m, g_mu / m, g_ls / m
    g_mu -= vstate.mu / s2
    g_ls -= sigma ** 2 / s2 - 1.0
    return ll - kl_divergence(vstate), (g_mu, g_ls)


def run_vi(model, steps, lr, rng, mc_draws=1, init=None, init_log_sigma=-3.0,
           average_last=0.5, history=None):
    """Plain stochastic gradient ascent on the ELBO.

    With one draw per step the iterates jitter around the optimum; the
    returned state averages the last ``average_last`` fraction of iterates
    (``0`` returns the final iterate). ``history``, if a list, receives the
    per-step ELBO estimates.
    """
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if init is None:
        mu = nn.init_params(model.spec, rng)
        init = VariationalState(mu, np.full(mu.size, float(init_log_sigma)), model.prior)
    mu, ls = init.mu.copy(), init.log_sigma.copy()
    start = steps - int(round(average_last * steps))
    acc_mu, acc_ls, n_acc = np.zeros_like(mu), np.zeros_like(ls), 0
    for t in range(steps):
        state = VariationalState(mu, ls, model.prior)
        elbo, (g_mu, g_ls) = elbo_and_grad(state, model, mc_draws, rng)
        if history is not None:
            history.append(elbo)
        mu = mu + lr * g_mu
        ls = ls + lr * g_ls
        if t >= start:
            acc_mu += mu
            acc_ls += ls
            n_acc += 1
    if n_acc:
        mu, ls = acc_mu / n_acc, acc_ls / n_acc
    return VariationalState(mu, ls, model.prior)


# Laplace approximation

@dataclass
class LaplaceState:
    """MAP estimate with diagonal posterior precision ``hessian_diag``."""

    map_theta: np.ndarray
    hessian_diag: np.ndarray
    n_floored: int = 0

    def __post_init__(self):
        if np.any(self.hessian_diag <= 0):
            raise InvalidInputError("hessian_diag must be positive")

    @property
    def variance(self):
        return 1.0 / self.hessian_diag

    def sample(self, n, rng):
        return self.map_theta + np.sqrt(self.variance) * rng.standard_normal(
            (n, self.map_theta.size))


def ggn_diagonal(model, theta):
    """Diagonal of the generalised Gauss-Newton matrix of the data potential.

    Gaussian likelihood: ``sum_n sum_k J_nk^2 / gamma_k``; categorical:
    ``sum_n J_n^T (diag(p) - p p^T) J_n`` on the logits Jacobian.
    """
    spec, X = model.spec, model.X
    q = spec.output_dim
    n = X.shape[0]
    if model.likelihood == "gaussian":
        inv_g = 1.0 / model.noise.expand(q)
        diag = np.zeros(spec.n_params)
        for k in range(q):
            e = np.zeros((n, q))
            e[:, k] = 1.0
            J = nn.per_example_grads(spec, theta, X, e)
            diag += inv_g[k] * np.sum(J * J, axis=0)
        return diag
    p = nn.forward(spec, theta, X)
    weighted_sq = np.zeros((n, spec.n_params))
    weighted = np.zeros((n, spec.n_params))
    for k in range(q):
        e = np.zeros((n, q))
        e[:, k] = 1.0
        J = nn.per_example_grads(spec, theta, X, e, wrt_logits=True)
        weighted_sq += p[:, k:k + 1] * J * J
        weighted += p[:, k:k + 1] * J
    return np.sum(weighted_sq - weighted ** 2, axis=0)


def _polish_map(model, theta, l1=0.0):
    if l1 > 0:
        return theta

    def fun(th):
        phi, g = nn.potential_and_grad(model.spec, th, model.X, model.Y, model.noise,
                                       model.likelihood)
        return (phi - nn.log_prior(th, model.prior),
                g - nn.grad_log_prior(th, model.prior))

    res = optimize.minimize(fun, theta, jac=True, method="L-BFGS-B",
                            options={"maxiter": 5000, "gtol": 1e-9, "ftol": 1e-15})
    return res.x if res.fun <= fun(theta)[0] else theta


def _laplace_state(model, theta, damping, include_prior=True):
    h = ggn_diagonal(model, theta)
    if include_prior:
        h = h + 1.0 / model.prior.variance
    h = h + damping
    low = ~(h > damping)
    n_floored = int(np.sum(low))
    if n_floored:
        logger.warning("%d curvature entries floored at damping %.3g", n_floored, damping)
        h = np.where(low, damping, h)
    return LaplaceState(theta, h, n_floored)


def run_laplace(model, epochs, lr, damping, rng, init=None, batch_size=32, polish=True):
    """MAP by minibatch descent (then full-batch L-BFGS polish) plus diagonal GGN.

    The posterior is ``N(map, diag(1 / (ggn + 1/sigma^2 + damping)))``.
    """
    if damping <= 0:
        raise InvalidInputError("damping must be > 0")
    theta = train_point_dnn(model, epochs, lr, rng, batch_size=batch_size, init=init,
                            weight_decay=True)
    if polish:
        theta = _polish_map(model, theta)
    return _laplace_state(model, theta, damping)


def run_lasso(model, epochs, lr, damping, rng, l1=1e-3, init=None, batch_size=32):
    """L1-penalised MAP by proximal minibatch descent, with a diagonal GGN spread.

    The penalty is ``l1 * N * ||theta||_1`` on the summed potential (so ``l1``
    is per data point). No Gaussian prior curvature is added; ``damping``
    keeps the precision of pruned weights finite.
    """
    if damping <= 0:
        raise InvalidInputError("damping must be > 0")
    _check_epochs(epochs)
    theta = nn.init_params(model.spec, rng) if init is None else np.array(init, dtype=float)
    n = model.n_data
    bs = min(batch_size, n)
    for epoch in range(epochs):
        for b in minibatches(n, bs, rng):
            phi, g = nn.potential_and_grad(model.spec, theta, model.X[b], model.Y[b],
                                           model.noise, model.likelihood)
            if not np.isfinite(phi) or phi / b.size > DIVERGENCE_LOSS:
                raise TrainingAbortError(f"lasso training diverged at epoch {epoch}", epoch)
            theta = theta - lr * g / b.size
            theta = np.sign(theta) * np.maximum(np.abs(theta) - lr * l1, 0.0)
    return _laplace_state(model, theta, damping, include_prior=False)


# MC-Dropout

def _hidden_masks(spec, n, rate, rng):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return {i: (rng.random((n, spec.layer_sizes[i])) < keep) / keep
            for i in range(1, len(spec.layer_sizes) - 1)}


def train_dropout_net(model, rate, epochs, lr, rng, batch_size=32, optimizer="adam", init=None):
    """Train with inverted dropout on every hidden layer and weight decay from the prior."""
    if not 0.0 < rate < 1.0:
        raise InvalidInputError("dropout rate must lie in (0, 1)")
    _check_epochs(epochs)
    spec = model.spec
    theta = nn.init_params(spec, rng) if init is None else np.array(init, dtype=float)
    opt = make_optimizer(optimizer, lr)
    n = model.n_data
    for epoch in range(epochs):
        for b in minibatches(n, min(batch_size, n), rng):
            keep = _hidden_masks(spec, b.size, rate, rng)
            phi, g_out, wrt_logits, (layers, acts, pre) = _masked_terms(model, theta, b, keep)
            if not np.isfinite(phi) or phi / b.size > DIVERGENCE_LOSS:
                raise TrainingAbortError(f"dropout training diverged at epoch {epoch}", epoch)
            if keep:
                g = nn._backward_masked(spec, layers, acts, pre, g_out, wrt_logits, keep)
            else:
                g = nn._backward(spec, layers, acts, pre, g_out, wrt_logits)
            g = g / b.size - nn.grad_log_prior(theta, model.prior) / n
            theta = opt.step(theta, g)
    return theta


def _masked_terms(model, theta, b, keep):
    spec = model.spec
    layers, acts, pre = nn._forward_cache(spec, theta, model.X[b], keep)
    out = acts[-1]
    Y = model.Y[b]
    if model.likelihood == "gaussian":
        inv_g = 1.0 / model.noise.expand(out.shape[1])
        r = out - Y
        return 0.5 * float(np.sum(r * r * inv_g)), r * inv_g, False, (layers, acts, pre)
    p = np.maximum(out, nn.PROB_FLOOR)
    return -float(np.sum(Y * np.log(p))), out - Y, True, (layers, acts, pre)


def mc_dropout_predict(spec, theta, X, rate, T_passes, rng):
    """``T_passes`` stochastic forward passes with dropout left on; ``(T, N, q)``."""
    if T_passes < 1:
        raise InvalidInputError("T_passes must be >= 1")
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError("dropout rate must lie in [0, 1)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.stack([nn.forward(spec, theta, X, keep=_hidden_masks(spec, X.shape[0], rate, rng))
                     for _ in range(T_passes)])


def run_mc_dropout(model, rate, epochs, lr, T_passes, X_test, rng, **train_kw):
    """Train with dropout, then return ``(theta, draws)`` from ``T_passes`` passes on ``X_test``."""
    if T_passes < 2:
        raise InvalidInputError("MC-Dropout needs T_passes >= 2")
    theta = train_dropout_net(model, rate, epochs, lr, rng, **train_kw)
    return theta, mc_dropout_predict(model.spec, theta, X_test, rate, T_passes, rng)


# SWAG

@dataclass
class SwagState:
    """Snapshot history with its column mean and unbiased column variance."""

    weight_history: np.ndarray
    mu: np.ndarray
    sigma_diag: np.ndarray

    @classmethod
    def from_history(cls, history):
        mu, var = swag_moments(history)
        return cls(np.asarray(history, dtype=float), mu, var)

    def sample(self, n, rng):
        return self.mu + np.sqrt(self.sigma_diag) * rng.standard_normal((n, self.mu.size))


def swag_moments(history):
    """Mean and ``1/(K-1)`` diagonal variance of a ``K x d`` weight history."""
    H = np.atleast_2d(np.asarray(history, dtype=float))
    if H.shape[0] < 2:
        raise InvalidInputError("SWAG needs at least 2 snapshots")
    return H.mean(axis=0), H.var(axis=0, ddof=1)


def run_swag(model, epochs, collect_last_K, lr, rng, batch_size=32, init=None):
    """Plain SGD on the mean negative log posterior; snapshot each of the last K epochs."""
    if collect_last_K < 2:
        raise InvalidInputError("collect_last_K must be >= 2")
    if collect_last_K > epochs:
        raise InvalidInputError("collect_last_K cannot exceed the number of epochs")
    snaps = []

    def keep(epoch, theta):
        if epoch >= epochs - collect_last_K:
            snaps.append(theta.copy())

    train_point_dnn(model, epochs, lr, rng, batch_size=batch_size, optimizer="sgd",
                    init=init, weight_decay=True, snapshot=keep)
    return SwagState.from_history(np.stack(snaps))
