"""Figures rendered next to the CSV reports.

Each function takes the same table that goes into the matching CSV, so a
figure never shows anything the delimited output does not contain.
"""
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

FIG_WIDTH = 5.0
DPI = 150

plt.rc("font", size=8)
plt.rc("axes", titlesize=9, labelsize=8, linewidth=0.6)
plt.rc("legend", fontsize=7, frameon=False)
plt.rc("savefig", dpi=DPI, bbox="tight")


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    logger.info("wrote %s", path)
    return path


def plot_band(band, path, title=None):
    """Predictive mean and 95% band against the first principal component."""
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, 3.0))
    x = band["pc1"]
    ax.fill_between(x, band["lower"], band["upper"], color="C0", alpha=0.25, lw=0,
                    label="95% interval")
    ax.plot(x, band["pred_mean"], color="C0", lw=1.0, label="predictive mean")
    if "y_true" in band:
        ax.scatter(x, band["y_true"], s=3, color="0.4", label="test response")
        ax.plot(x, band["truth_smooth"], color="C3", lw=1.0, ls="--", label="smoothed truth")
    ax.set_xlabel("first principal component")
    ax.set_ylabel("response")
    if title:
        ax.set_title(title)
    ax.legend(loc="best")
    return _save(fig, path)


def plot_reliability(bins, path, title=None):
    """Reliability diagram from equal-frequency calibration bins."""
    fig, ax = plt.subplots(figsize=(3.2, 3.2))
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls=":")
    ax.plot(bins.confidence, bins.accuracy, marker="o", ms=3, color="C1", lw=1.0)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("mean confidence")
    ax.set_ylabel("accuracy")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_trace(trace, path, n_coords=3, title=None):
    """Potential trace and the first few coordinates against sample index."""
    fig, axes = plt.subplots(2, 1, figsize=(FIG_WIDTH, 3.6), sharex=True)
    idx = np.arange(len(trace))
    axes[0].plot(idx, trace.potentials, lw=0.6, color="k")
    axes[0].set_ylabel("potential")
    for j in range(min(n_coords, trace.dim)):
        axes[1].plot(idx, trace.samples[:, j], lw=0.5, label=f"theta_{j}")
    axes[1].set_xlabel("sample")
    axes[1].set_ylabel("parameter")
    axes[1].legend(loc="upper right", ncol=n_coords)
    if title:
        axes[0].set_title(title)
    return _save(fig, path)


def plot_scatter(samples, centers, path, title=None, max_points=20000):
    """2-d sample scatter over the mixture centres."""
    samples = np.asarray(samples)
    if samples.shape[0] > max_points:
        step = int(np.ceil(samples.shape[0] / max_points))
        samples = samples[::step]
    fig, ax = plt.subplots(figsize=(3.2, 3.2))
    ax.scatter(samples[:, 0], samples[:, 1], s=1, alpha=0.3, color="C0", lw=0)
    ax.scatter(centers[:, 0], centers[:, 1], s=8, marker="x", color="C3", lw=0.8)
    ax.set_xlim(-5, 5)
    ax.set_ylim(-5, 5)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_comparison(rows, path, metric="mse"):
    """Horizontal bars of one comparison column, one bar per method."""
    rows = [r for r in rows if r.get(metric) not in (None, "")]
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, 0.3 * max(len(rows), 2) + 0.8))
    names = [r["method"] for r in rows]
    vals = [float(r[metric]) for r in rows]
    ax.barh(np.arange(len(rows)), vals, color="C0")
    ax.set_yticks(np.arange(len(rows)), names)
    ax.invert_yaxis()
    ax.set_xlabel(metric)
    return _save(fig, path)
