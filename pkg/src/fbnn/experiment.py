"""Experiment orchestration: one method per run, comparison tables, the mixture demo.

A run writes ``metrics.json`` plus CSV tables (and PNG figures drawn from the
same tables) into its output directory. Metric JSON is deterministic for a
fixed seed apart from the wall-clock derived keys in :data:`TIMING_KEYS`.
"""
import csv
import json
import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import nn
from .ces import (FbnnVariant, make_target, posterior_predictive, predictive_from_draws,
                  run_fbnn, run_full_bnn, tune_pcn_beta)
from .config import FBNN_METHODS, MCMC_METHODS, build_dataset, build_model
from .diagnostics import (MixtureTarget, classification_metrics, credible_band, ess_report,
                          regression_metrics)
from .errors import FbnnError, InvalidInputError
from .samplers import PotentialTarget, SamplerConfig, initial_state, run_chain

logger = logging.getLogger(__name__)

TIMING_KEYS = ("seconds_calibration", "seconds_training", "seconds_sampling", "seconds_total",
               "min_ess_per_s", "spdup")
METRIC_KEYS = ("mse", "cp", "accuracy", "ece", "ess_min", "ess_med", "ess_max") + TIMING_KEYS
COMPARISON_COLUMNS = ("method", "task", "mse_acc", "cp_ece", "seconds_total", "ess_min",
                      "ess_med", "ess_max", "min_ess_per_s", "spdup")
FIRST200 = 200


def _clean(value):
    """JSON-safe scalars: numpy types unwrapped, NaN/inf mapped to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(doc, path):
    Path(path).write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def strip_timing(report):
    """Copy of a metrics document without wall-clock derived fields."""
    doc = json.loads(json.dumps(report))
    for k in TIMING_KEYS:
        doc.get("metrics", {}).pop(k, None)
    return doc


def _write_table(table, path):
    cols = list(table)
    n = len(table[cols[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(n):
            w.writerow([repr(float(table[c][i])) for c in cols])


def _write_bins(bins, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "lower_edge", "upper_edge", "mean_confidence", "accuracy", "count"])
        for row in bins.rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:5]] + [row[5]])


# --- method dispatch -------------------------------------------------------------

def _run_mcmc(config, model, rng):
    s = config.sampler
    method = config.method
    if method in FBNN_METHODS:
        variant = FbnnVariant.parse(method)
        calib = replace(s, thinning=config.fbnn.calibration_thinning or s.thinning)
        sample = replace(s, thinning=config.fbnn.sampling_thinning)
        ref = None
        if config.fbnn.reference_size < model.n_data:
            ref_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
            ref = np.sort(ref_rng.choice(model.n_data, config.fbnn.reference_size, replace=False))
        res = run_fbnn(model, variant, config.fbnn.J, s.iterations, calib, sample,
                       config.emulator, rng, ref_indices=ref, mode=config.fbnn.mode,
                       beta_rule=config.fbnn.beta_rule)
        res.extra["emulator_epochs"] = config.emulator.epochs
        return res
    kernel = "pcn" if method == "bnn-pcn" else "sghmc"
    T = FIRST200 if method == "bnn-sghmc-first200" else s.iterations
    cfg = s
    extra = {}
    if kernel == "pcn" and config.tuning.pcn_grid:
        target = make_target(model)
        tune_rng, rng = rng.spawn(2)
        start = initial_state("pcn", model.prior.sample(model.dim, tune_rng), target)
        beta, rates = tune_pcn_beta(target, start, model.prior, tune_rng,
                                    pilot=config.tuning.pilot, goal=config.tuning.goal)
        cfg = replace(s, pcn_beta=beta)
        extra["beta_sweep"] = {str(k): v for k, v in rates.items()}
    res = run_full_bnn(model, kernel, T, cfg, rng)
    res.method = method
    res.extra.update(extra)
    if kernel == "pcn":
        res.extra["pcn_beta"] = cfg.pcn_beta
    return res


def _run_baseline(config, model, split, rng):
    """Return ``(draws (S, N_test, q), timings, extra)`` for a non-MCMC method."""
    tr = config.training
    method = config.method
    extra = {}
    t0 = time.perf_counter()
    if method == "mc_dropout":
        theta, draws = bl.run_mc_dropout(model, tr.dropout_rate, tr.epochs, tr.lr, tr.mc_passes,
                                         split.X_test, rng, batch_size=tr.batch_size)
        t_train = time.perf_counter() - t0
        return draws, {"seconds_training": t_train, "seconds_total": t_train}, extra
    if method == "dnn":
        thetas = [bl.train_point_dnn(model, tr.epochs, tr.lr, rng, batch_size=tr.batch_size)]
    elif method == "ensemble":
        thetas = bl.run_ensemble(model, tr.ensemble_size, tr.epochs, tr.lr,
                                 root_seed=int(rng.integers(2 ** 32)), batch_size=tr.batch_size)
        extra["members"] = len(thetas)
    elif method == "vi":
        state = bl.run_vi(model, tr.vi_steps, tr.lr if tr.vi_lr is None else tr.vi_lr, rng)
        thetas = state.sample(tr.n_draws, rng)
    elif method == "laplace":
        state = bl.run_laplace(model, tr.epochs, tr.lr, tr.laplace_damping, rng,
                               batch_size=tr.batch_size)
        extra["curvature_floored"] = state.n_floored
        thetas = state.sample(tr.n_draws, rng)
    elif method == "lasso":
        state = bl.run_lasso(model, tr.epochs, tr.lr, tr.laplace_damping, rng, l1=tr.lasso_l1,
                             batch_size=tr.batch_size)
        extra["zero_weights"] = int(np.sum(state.map_theta == 0))
        thetas = state.sample(tr.n_draws, rng)
    elif method == "swag":
        state = bl.run_swag(model, tr.epochs, tr.swag_k, tr.swag_lr, rng,
                            batch_size=tr.batch_size)
        thetas = state.sample(tr.n_draws, rng)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    t_train = time.perf_counter() - t0
    draws = np.stack([nn.forward(model.spec, th, split.X_test) for th in np.atleast_2d(thetas)])
    return draws, {"seconds_training": t_train, "seconds_total": t_train}, extra


def _predictive_metrics(config, pred, split):
    if config.task == "regression":
        m = regression_metrics(pred, split.Y_test)
        return {"mse": m["mse"], "cp": m["cp"], "accuracy": None, "ece": None}, None
    m = classification_metrics(pred, split.labels_test, n_bins=config.report.ece_bins)
    return {"mse": None, "cp": None, "accuracy": m["accuracy"], "ece": m["ece"]}, m["bins"]


def _baseline_rate(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc["metrics"].get("min_ess_per_s")


def run_experiment(config, out_dir=None, plots=None):
    """Run ``config.method`` and write its artifacts.

    Returns the metrics document. On a method failure a ``metrics.json`` with
    ``status: failed`` and the error message is still written before the
    exception propagates.
    """
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = config.report.plots if plots is None else plots
    echo = config.to_dict()
    echo.pop("output_dir", None)
    doc = {"method": config.method, "seed": config.seed, "task": config.task,
           "status": "ok", "config": echo, "artifacts": ["metrics.json"], "extra": {}}
    metrics = {k: None for k in METRIC_KEYS}
    root = np.random.SeedSequence(config.seed)
    method_seq, pred_seq = root.spawn(2)
    try:
        split = build_dataset(config)
        model = build_model(config, split)
        rng = np.random.default_rng(method_seq)
        pred_rng = np.random.default_rng(pred_seq)
        trace = None
        if config.method in MCMC_METHODS:
            res = _run_mcmc(config, model, rng)
            trace = res.trace
            timings = res.timings
            doc["extra"].update(res.extra)
            pred = posterior_predictive(model.spec, trace, split.X_test, model.noise, config.task,
                                        burn_in=config.sampler.burn_in, rng=pred_rng)
            timed = trace
            if res.method.startswith("fbnn") and config.report.fbnn_time == "total":
                timed = trace.shift_times(timings["seconds_calibration"]
                                          + timings["seconds_training"])
            ess = ess_report(timed)
            metrics.update({"ess_min": ess.min, "ess_med": ess.median, "ess_max": ess.max,
                            "min_ess_per_s": ess.min_ess_per_second})
            trace.to_csv(out / "trace.csv")
            doc["artifacts"].append("trace.csv")
            if res.calibration is not None:
                res.calibration.to_csv(out / "calibration.csv")
                doc["artifacts"].append("calibration.csv")
        else:
            draws, timings, extra = _run_baseline(config, model, split, rng)
            doc["extra"].update(extra)
            pred = predictive_from_draws(draws, config.task,
                                         model.noise if config.task == "regression" else None,
                                         pred_rng)
        for k in ("seconds_calibration", "seconds_training", "seconds_sampling", "seconds_total"):
            metrics[k] = float(timings.get(k, 0.0))
        pm, bins = _predictive_metrics(config, pred, split)
        metrics.update(pm)
        if config.report.baseline_metrics and metrics["min_ess_per_s"]:
            base = _baseline_rate(config.report.baseline_metrics)
            metrics["spdup"] = metrics["min_ess_per_s"] / base if base else None
        figures = []
        if config.task == "regression":
            if pred.draws.shape[0] >= 2:
                band = credible_band(pred.draws, split.X_test, split.Y_test,
                                     window=config.report.band_window)
                _write_table(band, out / "band.csv")
                doc["artifacts"].append("band.csv")
                figures.append(("band.png", "band", band))
        else:
            _write_bins(bins, out / "bins.csv")
            doc["artifacts"].append("bins.csv")
            figures.append(("reliability.png", "bins", bins))
        if trace is not None:
            figures.append(("trace.png", "trace", trace))
        if plots:
            doc["artifacts"] += _render(figures, out, config.method)
    except FbnnError as exc:
        doc["status"] = "failed"
        doc["error"] = f"{type(exc).__name__}: {exc}"
        doc["metrics"] = metrics
        write_json(doc, out / "metrics.json")
        logger.error("%s failed: %s (partial artifacts: %s)", config.method, exc,
                     ", ".join(doc["artifacts"]))
        raise
    doc["metrics"] = metrics
    write_json(doc, out / "metrics.json")
    return _clean(doc)


def _render(figures, out, title):
    from . import plotting

    made = []
    for name, kind, obj in figures:
        if kind == "band":
            plotting.plot_band(obj, out / name, title=title)
        elif kind == "bins":
            plotting.plot_reliability(obj, out / name, title=title)
        elif kind == "trace":
            plotting.plot_trace(obj, out / name, title=title)
        made.append(name)
    return made


# --- comparison table ------------------------------------------------------------

def load_report(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "metrics" not in doc or "method" not in doc:
        raise InvalidInputError(f"{path}: not a metrics report")
    return doc


def comparison_rows(reports, baseline="bnn-sghmc"):
    """One comparison-table row per report; ``spdup`` relative to the ``baseline`` method."""
    if len(reports) < 2:
        raise InvalidInputError("compare needs at least 2 reports")
    base = [r for r in reports if r["method"] == baseline]
    if not base:
        raise InvalidInputError(f"no report tagged with baseline method {baseline!r}")
    base_rate = base[0]["metrics"].get("min_ess_per_s")
    rows = []
    for r in reports:
        m = r["metrics"]
        reg = r.get("task", "regression") == "regression"
        rate = m.get("min_ess_per_s")
        sp = rate / base_rate if rate is not None and base_rate else None
        rows.append({"method": r["method"], "task": r.get("task", "regression"),
                     "mse_acc": m.get("mse") if reg else m.get("accuracy"),
                     "cp_ece": m.get("cp") if reg else m.get("ece"),
                     "seconds_total": m.get("seconds_total"),
                     "ess_min": m.get("ess_min"), "ess_med": m.get("ess_med"),
                     "ess_max": m.get("ess_max"), "min_ess_per_s": rate, "spdup": sp})
    return rows


def compare(report_paths, out_path, baseline="bnn-sghmc", plots=False):
    """Aggregate run reports into ``comparison.csv`` (columns :data:`COMPARISON_COLUMNS`)."""
    rows = comparison_rows([load_report(p) for p in report_paths], baseline)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float)
                                                   else row[c]) for c in COMPARISON_COLUMNS])
    if plots:
        from . import plotting

        plotting.plot_comparison(rows, out_path.with_suffix(".png"), metric="mse_acc")
    return rows


# --- 25-Gaussian mixture demo ----------------------------------------------------

def mixture_target_callbacks(mixture, prior):
    """Sampling target whose pCN potential absorbs the Gaussian reference measure."""
    def U(x):
        return -mixture.logpdf(x)

    def phi(x):
        return U(x) + nn.log_prior(x, prior)

    return PotentialTarget(potential=phi, dim=2, neg_log_post=U,
                           grad=lambda x: -mixture.grad_logpdf(x))


def mixture_demo(samplers=("sghmc", "pcn"), n_samples=200000, seed=0, out_dir=".",
                 sghmc_lr=1e-3, sghmc_friction=0.1, prior_std=3.0, pilot=2000,
                 beta_grid=(0.5, 0.2, 0.1, 0.05, 0.02, 0.01), plots=True):
    """Sample the 25-Gaussian mixture with each sampler and write scatter CSVs.

    pCN uses the reference Gaussian ``N(0, prior_std^2 I)``; its step is the
    grid value whose pilot acceptance is closest to 0.25. Both chains start at
    the central mode. Returns the summary that is also written to
    ``mixture_summary.json``.
    """
    if n_samples < 1000:
        raise InvalidInputError("n_samples must be >= 1000")
    unknown = set(samplers) - {"sghmc", "pcn"}
    if unknown:
        raise InvalidInputError(f"unsupported mixture sampler(s): {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mixture = MixtureTarget()
    prior = nn.GaussianPrior(prior_std ** 2)
    target = mixture_target_callbacks(mixture, prior)
    start = mixture.centers[np.argmin(np.sum(mixture.centers ** 2, axis=1))]
    summary = {"n_samples": n_samples, "seed": seed, "component_std": mixture.component_std,
               "samplers": {}}
    rngs = dict(zip(("sghmc", "pcn"), np.random.default_rng(seed).spawn(2)))
    for name in samplers:
        rng = rngs[name]
        info = {}
        if name == "pcn":
            beta, rates = tune_pcn_beta(target, initial_state("pcn", start, target), prior, rng,
                                        grid=beta_grid, pilot=pilot)
            cfg = SamplerConfig(iterations=n_samples, pcn_beta=beta)
            info.update(beta=beta, beta_sweep={str(k): v for k, v in rates.items()})
        else:
            cfg = SamplerConfig(iterations=n_samples, sghmc_lr=sghmc_lr,
                                sghmc_friction=sghmc_friction)
            info.update(sghmc_lr=sghmc_lr, sghmc_friction=sghmc_friction)
        trace = run_chain(start, name, cfg, target, rng, prior=prior, record=target.neg_log_post)
        info["acceptance_rate"] = trace.acceptance_rate
        info["coverage_3sd"] = mixture.coverage(trace.samples)
        info["per_center_fraction"] = _per_center(mixture, trace.samples)
        path = out / f"scatter_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "sampler_tag"])
            for x, y in trace.samples:
                w.writerow([repr(float(x)), repr(float(y)), name])
        if plots:
            from . import plotting

            plotting.plot_scatter(trace.samples, mixture.centers, out / f"scatter_{name}.png",
                                  title=name)
        summary["samplers"][name] = info
        logger.info("%s: coverage %.4f, acceptance %.3f", name, info["coverage_3sd"],
                    info["acceptance_rate"])
    write_json(summary, out / "mixture_summary.json")
    return _clean(summary)


def _per_center(mixture, samples, n_std=3.0):
    d2 = ((samples[:, None, :] - mixture.centers[None]) ** 2).sum(axis=2)
    near = d2 <= (n_std * mixture.component_std) ** 2
    return [float(v) for v in near.mean(axis=0)]
