"""Command-line entry point: ``fbnn {gen-data,run,compare,mixture-demo,validate-config}``."""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import build_dataset, config_from_dict, dump_config, load_config
from .data import save_csv
from .errors import FbnnError

logger = logging.getLogger("fbnn")


def _load(args):
    config = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "method", None):
        config = replace(config, method=args.method)
    return config


def cmd_gen_data(args):
    config = _load(args)
    split = build_dataset(config)
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    save_csv(split, path, target_column=config.dataset.target_column)
    print(f"wrote {path} ({split.n} rows, {split.X.shape[1]} features, {split.task})")
    return 0


def cmd_run(args):
    from .experiment import run_experiment

    config = _load(args)
    if args.baseline_metrics:
        config.report.baseline_metrics = args.baseline_metrics
    doc = run_experiment(config, out_dir=args.out, plots=False if args.no_plots else None)
    m = doc["metrics"]
    shown = {k: m[k] for k in ("mse", "cp", "accuracy", "ece", "ess_min", "min_ess_per_s")
             if m.get(k) is not None}
    print(f"{config.method}: " + ", ".join(f"{k}={v:.4g}" for k, v in shown.items()))
    return 0


def cmd_compare(args):
    from .experiment import compare

    out = Path(args.out or ".") / "comparison.csv"
    rows = compare(args.reports, out, baseline=args.baseline, plots=not args.no_plots)
    print(f"wrote {out} ({len(rows)} methods, baseline {args.baseline})")
    return 0


def cmd_mixture_demo(args):
    from .experiment import mixture_demo

    seed = 0 if args.seed is None else args.seed
    summary = mixture_demo(args.samplers, args.n_samples, seed, args.out or ".",
                           plots=not args.no_plots)
    for name, info in summary["samplers"].items():
        print(f"{name}: coverage_3sd={info['coverage_3sd']:.4f} "
              f"acceptance={info['acceptance_rate']:.3f}")
    return 0


def cmd_validate_config(args):
    config = _load(args)
    print(dump_config(config))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fbnn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML or JSON experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (default: config output_dir)")

    sp = sub.add_parser("gen-data", help="write the configured synthetic dataset as CSV")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("run", help="run one method and write metrics, tables and figures")
    common(sp)
    sp.add_argument("--method", help="override the config method")
    sp.add_argument("--baseline-metrics", help="metrics.json of the spdup baseline run")
    sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="aggregate metrics.json files into comparison.csv")
    sp.add_argument("reports", nargs="+", help="metrics.json files")
    sp.add_argument("--baseline", default="bnn-sghmc", help="method tag used for spdup")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mixture-demo", help="SGHMC vs pCN on the 25-Gaussian mixture")
    common(sp, config=False)
    sp.add_argument("--samplers", nargs="+", default=["sghmc", "pcn"],
                    choices=["sghmc", "pcn"])
    sp.add_argument("--n-samples", type=int, default=200000)
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_mixture_demo)

    sp = sub.add_parser("validate-config", help="check a config and print it with defaults")
    common(sp)
    sp.set_defaults(func=cmd_validate_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FbnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
