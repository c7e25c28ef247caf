"""Sampling-efficiency and predictive-quality metrics.

ESS statistics, minESS/s and speedup, MSE / coverage, accuracy / ECE with
equal-frequency bins, credible bands along the first principal component,
grid Hellinger distance, and the 25-Gaussian mixture demo target.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass
class EssReport:
    per_coordinate_ess: np.ndarray
    min: float
    median: float
    max: float
    min_ess_per_second: float
    total_seconds: float
    constant_coordinates: int = 0

    def to_dict(self):
        return {"ess_min": self.min, "ess_med": self.median, "ess_max": self.max,
                "min_ess_per_s": self.min_ess_per_second}


@dataclass
class CalibrationBins:
    bin_edges: np.ndarray
    confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def rows(self):
        for b in range(self.count.size):
            yield (b, float(self.bin_edges[b]), float(self.bin_edges[b + 1]),
                   float(self.confidence[b]), float(self.accuracy[b]), int(self.count[b]))


@dataclass
class PredictiveSummary:
    """Predictive distribution at a set of test inputs.

    ``draws`` has shape ``(S, N, q)``: one network output per posterior sample
    (class probabilities for classification). ``mean``, ``lower`` and ``upper``
    are ``N x q``.
    """

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    task: str = "regression"
    draws: np.ndarray = field(default=None, repr=False)

    @property
    def labels(self):
        return np.argmax(self.mean, axis=1)

    @property
    def variance(self):
        if self.draws is None or self.draws.shape[0] < 2:
            return np.zeros_like(self.mean)
        return self.draws.var(axis=0, ddof=1)


# --- effective sample size -------------------------------------------------

def autocorrelation(x):
    """Sample autocorrelation of a 1-d series via FFT (biased normalisation)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conjugate(f))[:n] / n
    if acov[0] <= 0:
        return np.ones(n)
    return acov / acov[0]


def ess(chain):
    """Effective sample size of one series.

    ``T / (1 + 2 sum_k rho_k)`` with the lag sum truncated by Geyer's initial
    positive sequence: pairs ``rho_{2m} + rho_{2m+1}`` are accumulated while
    positive, and made non-increasing (initial monotone sequence). A constant
    series returns ``T``. Result is clamped to ``[1, T]``.
    """
    x = np.asarray(chain, dtype=float).ravel()
    T = x.size
    if T < 4:
        raise InvalidInputError("ess needs at least 4 samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("chain contains non-finite values")
    if np.ptp(x) == 0:
        return float(T)
    rho = autocorrelation(x)
    n_pairs = T // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    neg = np.flatnonzero(pairs <= 0)
    stop = neg[0] if neg.size else n_pairs
    tau = -1.0 + 2.0 * np.minimum.accumulate(pairs[:stop]).sum()
    if tau <= 0:
        return float(T)
    return float(np.clip(T / tau, 1.0, T))


def ess_report(trace):
    """Per-coordinate ESS and the minESS/s summary for a :class:`ChainTrace`."""
    samples = np.asarray(trace.samples)
    if samples.shape[0] == 0:
        raise InvalidInputError("empty trace")
    values = np.array([ess(samples[:, j]) for j in range(samples.shape[1])])
    n_const = int(np.sum(np.ptp(samples, axis=0) == 0))
    if n_const:
        logger.info("%d constant coordinates; ESS set to T for them", n_const)
    total = float(trace.wall_times[-1])
    lo = float(values.min())
    per_s = lo / total if total > 0 else float("inf")
    return EssReport(values, lo, float(np.median(values)), float(values.max()),
                     per_s, total, n_const)


def spdup(model_report, baseline_report):
    """Ratio of minimum ESS per second, model over baseline."""
    m = _per_second(model_report)
    b = _per_second(baseline_report)
    if not b > 0:
        raise InvalidInputError("baseline min ESS per second must be positive")
    return m / b


def _per_second(report):
    return report.min_ess_per_second if isinstance(report, EssReport) else float(report)


# --- regression / classification -------------------------------------------

def regression_metrics(pred, y_true):
    y = np.asarray(y_true, dtype=float).reshape(pred.mean.shape) \
        if np.asarray(y_true).size == pred.mean.size else None
    if y is None:
        raise InvalidInputError("y_true does not align with the predictions")
    mse = float(np.mean((pred.mean - y) ** 2))
    inside = (y >= pred.lower) & (y <= pred.upper)
    return {"mse": mse, "cp": float(np.mean(inside))}


def equal_frequency_bins(n, n_bins):
    """Split sorted positions ``0..n-1`` into ``n_bins`` runs differing in size by <= 1."""
    if n < n_bins:
        raise InvalidInputError(f"need at least {n_bins} points, got {n}")
    return np.array_split(np.arange(n), n_bins)


def calibration_bins(confidence, correct, n_bins=10):
    conf = np.asarray(confidence, dtype=float).ravel()
    corr = np.asarray(correct, dtype=float).ravel()
    order = np.argsort(conf, kind="stable")
    groups = equal_frequency_bins(conf.size, n_bins)
    c = np.empty(n_bins)
    a = np.empty(n_bins)
    k = np.empty(n_bins, dtype=int)
    edges = np.empty(n_bins + 1)
    sorted_conf = conf[order]
    for b, g in enumerate(groups):
        idx = order[g]
        c[b] = conf[idx].mean()
        a[b] = corr[idx].mean()
        k[b] = g.size
        edges[b] = sorted_conf[g[0]]
    edges[-1] = sorted_conf[-1]
    return CalibrationBins(edges, c, a, k)


def expected_calibration_error(bins):
    n = bins.count.sum()
    return float(np.sum(bins.count / n * np.abs(bins.accuracy - bins.confidence)))


def classification_metrics(pred, labels, n_bins=10):
    """Accuracy, ECE and reliability-diagram bins from predicted class probabilities."""
    probs = pred.mean if isinstance(pred, PredictiveSummary) else np.asarray(pred)
    labels = np.asarray(labels).astype(int).ravel()
    if probs.shape[0] != labels.size:
        raise InvalidInputError("labels do not align with the predictions")
    guess = np.argmax(probs, axis=1)
    correct = guess == labels
    bins = calibration_bins(probs.max(axis=1), correct, n_bins)
    return {"accuracy": float(correct.mean()),
            "ece": expected_calibration_error(bins),
            "bins": bins}


# --- credible bands ----------------------------------------------------------

def first_principal_component(X):
    """Unit direction of largest variance; sign fixed so the largest entry is positive."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    cov = np.atleast_2d(np.cov(Xc, rowvar=False))
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 0:
        warnings.warn("degenerate covariance; projecting on coordinate 0")
        v = np.zeros(X.shape[1])
        v[0] = 1.0
        return v
    v = vecs[:, -1]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v


def moving_average(y, window):
    y = np.asarray(y, dtype=float)
    if window <= 1:
        return y.copy()
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    out = np.empty_like(y)
    n = y.size
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i - half + window)
        out[i] = (c[hi] - c[lo]) / (hi - lo)
    return out


def credible_band(draws, X_test, y_true=None, window=25, level=0.95):
    """Band table along the first principal component of ``X_test``.

    ``draws`` is ``S x N`` (per-sample predictions for one output). Returns a
    dict of equal-length columns sorted by the projection.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        draws = draws[..., 0]
    if draws.shape[0] < 2:
        raise InvalidInputError("credible band needs at least 2 posterior samples")
    X_test = np.asarray(X_test, dtype=float)
    v = first_principal_component(X_test)
    proj = (X_test - X_test.mean(axis=0)) @ v
    order = np.argsort(proj, kind="stable")
    a = 100 * (1 - level) / 2
    lo, hi = np.percentile(draws, [a, 100 - a], axis=0)
    table = {"pc1": proj[order], "pred_mean": draws.mean(axis=0)[order],
             "lower": lo[order], "upper": hi[order]}
    if y_true is not None:
        y = np.asarray(y_true, dtype=float).ravel()[order]
        table["y_true"] = y
        table["truth_smooth"] = moving_average(y, window)
    return table


# --- Hellinger distance on a grid ---------------------------------------------

def _grid(bounds, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    cell = np.prod([ax[1] - ax[0] for ax in axes])
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), cell


def _eval(fn, pts, vectorized):
    if vectorized:
        out = np.asarray(fn(pts), dtype=float).ravel()
        if out.size == pts.shape[0]:
            return out
    return np.array([fn(p) for p in pts], dtype=float)


def hellinger_grid(potential_a, potential_b, bounds, resolution=256, vectorized=True):
    """Hellinger distance between ``exp(-potential_a)`` and ``exp(-potential_b)``.

    Both densities are normalised by quadrature on a regular grid over
    ``bounds`` (one ``(lo, hi)`` pair per dimension, at most two) and
    ``sqrt(0.5 * sum (sqrt(pa) - sqrt(pb))^2 dA)`` is returned.
    """
    bounds = [tuple(map(float, b)) for b in np.atleast_2d(bounds)]
    if len(bounds) > 2:
        raise InvalidInputError("grid dimension must be <= 2")
    if resolution < 32:
        raise InvalidInputError("resolution must be >= 32 per axis")
    pts, cell = _grid(bounds, resolution)
    ua = _eval(potential_a, pts, vectorized)
    ub = _eval(potential_b, pts, vectorized)
    if not (np.all(np.isfinite(ua)) and np.all(np.isfinite(ub))):
        raise InvalidInputError("non-finite potential on the grid")
    la = -ua - logsumexp(-ua) - np.log(cell)
    lb = -ub - logsumexp(-ub) - np.log(cell)
    sq = np.sum((np.exp(0.5 * la) - np.exp(0.5 * lb)) ** 2) * cell
    return float(np.sqrt(min(max(0.5 * sq, 0.0), 1.0)))


# --- 25-Gaussian mixture -------------------------------------------------------

@dataclass
class MixtureTarget:
    """Equal-weight mixture of isotropic Gaussians on a square grid of centres."""

    centers: np.ndarray = None
    component_std: float = 0.1
    weights: np.ndarray = None

    def __post_init__(self):
        if self.centers is None:
            ax = np.linspace(-4.0, 4.0, 5)
            gx, gy = np.meshgrid(ax, ax, indexing="ij")
            self.centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        self.centers = np.asarray(self.centers, dtype=float)
        if self.weights is None:
            self.weights = np.full(len(self.centers), 1.0 / len(self.centers))
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-12):
            raise InvalidInputError("mixture weights must sum to 1")

    def logpdf(self, points):
        return mixture25_logpdf(points, self)

    def grad_logpdf(self, point):
        x = np.asarray(point, dtype=float)
        diff = self.centers - x
        s2 = self.component_std ** 2
        lw = np.log(self.weights) - 0.5 * np.einsum("ij,ij->i", diff, diff) / s2
        r = np.exp(lw - lw.max())
        return (r @ diff) / (r.sum() * s2)

    def coverage(self, samples, n_std=3.0):
        """Fraction of samples within ``n_std`` component std of some centre."""
        s = np.asarray(samples, dtype=float).reshape(-1, 2)
        d2 = ((s[:, None, :] - self.centers[None]) ** 2).sum(axis=2)
        return float(np.mean(d2.min(axis=1) <= (n_std * self.component_std) ** 2))


def mixture25_logpdf(point, target):
    """Log density of the mixture at one point (2-vector) or a batch ``(n, 2)``."""
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, 2)
    s2 = target.component_std ** 2
    d2 = ((x[:, None, :] - target.centers[None]) ** 2).sum(axis=2)
    comp = np.log(target.weights)[None] - 0.5 * d2 / s2 - np.log(2 * np.pi * s2)
    # hand-rolled log-sum-exp: this sits in the inner loop of the mixture demo
    top = comp.max(axis=1)
    out = top + np.log(np.exp(comp - top[:, None]).sum(axis=1))
    return float(out[0]) if single else out
