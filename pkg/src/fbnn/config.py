"""Experiment configuration: a nested YAML/JSON document mapped onto dataclasses.

Every section has defaults, so ``{}`` is a valid config (FBNN SGHMC-pCN on
desk-scale synthetic regression). Unknown keys are rejected so typos fail
loudly instead of silently running the default.
"""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import nn
from .data import TASKS, SyntheticSpec, generate, load_csv
from .emulator import EmulatorSpec, MODES
from .errors import InvalidInputError
from .samplers import SamplerConfig

FBNN_METHODS = tuple(f"fbnn-{a}-{b}" for a in ("sghmc", "pcn") for b in ("sghmc", "pcn"))
MCMC_METHODS = ("bnn-sghmc", "bnn-pcn", "bnn-sghmc-first200") + FBNN_METHODS
METHODS = ("dnn", "ensemble", "vi", "laplace", "lasso", "mc_dropout", "swag") + MCMC_METHODS


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    task: str = "regression"
    n_samples: int = 2000
    n_features: int = None
    n_informative: int = 5
    noise_std: float = 0.5
    class_sep: float = 1.0
    test_fraction: float = 0.2
    path: str = None
    target_column: str = "y"

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise InvalidInputError(f"dataset.source must be synthetic or csv, got {self.source!r}")
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        if self.source == "csv" and not self.path:
            raise InvalidInputError("dataset.path is required for csv sources")
        if self.n_features is None:
            self.n_features = 10 if self.task == "regression" else 20


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [16])
    activation: str = "tanh"
    likelihood: str = None
    noise_variance: float = None
    prior_variance: float = 1.0

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        if self.likelihood not in (None,) + nn.LIKELIHOODS:
            raise InvalidInputError(f"unknown likelihood {self.likelihood!r}")
        if self.noise_variance is not None and self.noise_variance <= 0:
            raise InvalidInputError("noise_variance must be > 0")
        if self.prior_variance <= 0:
            raise InvalidInputError("prior_variance must be > 0")


@dataclass
class FbnnConfig:
    J: int = 200
    beta_rule: str = "spread"
    reference_size: int = 512
    mode: str = "predictions"
    calibration_thinning: int = None
    sampling_thinning: int = 1

    def __post_init__(self):
        if self.J < 2:
            raise InvalidInputError("fbnn.J must be >= 2")
        if self.beta_rule not in ("spread", "grid", "fixed"):
            raise InvalidInputError(f"unknown beta_rule {self.beta_rule!r}")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown emulator mode {self.mode!r}")


@dataclass
class TuningConfig:
    """Fixed-grid pilot search for the pCN step on the true potential."""

    pcn_grid: bool = True
    pilot: int = 200
    goal: float = 0.25


@dataclass
class TrainingConfig:
    """Settings for the optimisation-based baselines."""

    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    ensemble_size: int = 5
    dropout_rate: float = 0.1
    mc_passes: int = 100
    swag_k: int = 20
    swag_lr: float = 1e-2
    vi_steps: int = 2000
    vi_lr: float = 1e-4
    laplace_damping: float = 1e-4
    lasso_l1: float = 1e-3
    n_draws: int = 200


@dataclass
class ReportConfig:
    band_window: int = 25
    ece_bins: int = 10
    plots: bool = True
    fbnn_time: str = "total"
    baseline_metrics: str = None

    def __post_init__(self):
        if self.fbnn_time not in ("total", "sampling"):
            raise InvalidInputError("report.fbnn_time must be total or sampling")


def _desk_sampler():
    return {"iterations": 2000, "thinning": 16, "sghmc_lr": 1e-5, "sghmc_friction": 0.5,
            "batch_size": 100}


def _desk_emulator():
    return {"hidden_sizes": [64, 64], "dropout_rate": 0.0}


@dataclass
class ExperimentConfig:
    method: str = "fbnn-sghmc-pcn"
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(**_desk_sampler()))
    fbnn: FbnnConfig = field(default_factory=FbnnConfig)
    emulator: EmulatorSpec = field(default_factory=lambda: EmulatorSpec(**_desk_emulator()))
    training: TrainingConfig = field(default_factory=TrainingConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(
                f"unknown method {self.method!r}; choose one of {', '.join(METHODS)}")
        if self.method == "mc_dropout" and not 0 < self.training.dropout_rate < 1:
            raise InvalidInputError("mc_dropout needs training.dropout_rate in (0, 1)")

    @property
    def task(self):
        return self.dataset.task

    @property
    def likelihood(self):
        if self.model.likelihood:
            return self.model.likelihood
        return "gaussian" if self.task == "regression" else "categorical"

    def to_dict(self):
        d = asdict(self)
        d["emulator"]["hidden_sizes"] = list(d["emulator"]["hidden_sizes"])
        return d


_SECTIONS = {"dataset": DatasetConfig, "model": ModelConfig, "sampler": SamplerConfig,
             "fbnn": FbnnConfig, "emulator": EmulatorSpec, "training": TrainingConfig,
             "tuning": TuningConfig, "report": ReportConfig}
_DEFAULTS = {"sampler": _desk_sampler, "emulator": _desk_emulator}


def _build(cls, values, section, defaults=None):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidInputError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    merged = {**(defaults() if defaults else {}), **values}
    try:
        return cls(**merged)
    except TypeError as exc:
        raise InvalidInputError(f"[{section}]: {exc}") from None


def config_from_dict(doc):
    """Validate a parsed config document and return an :class:`ExperimentConfig`."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a mapping at the top level")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise InvalidInputError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {k: doc[k] for k in ("method", "seed", "output_dir") if k in doc}
    for name, cls in _SECTIONS.items():
        section = doc.get(name)
        if section is not None and not isinstance(section, dict):
            raise InvalidInputError(f"[{name}] must be a mapping")
        kw[name] = _build(cls, section, name, _DEFAULTS.get(name))
    return ExperimentConfig(**kw)


def load_config(path):
    """Read a YAML (or JSON, which is valid YAML) config file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"{path}: not valid YAML: {exc}") from None
    return config_from_dict(doc)


def dump_config(config):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


def build_dataset(config):
    ds = config.dataset
    if ds.source == "csv":
        return load_csv(ds.path, ds.target_column, ds.task, ds.test_fraction, config.seed)
    spec = SyntheticSpec(task=ds.task, n_samples=ds.n_samples, n_features=ds.n_features,
                         n_informative=ds.n_informative, noise_std=ds.noise_std,
                         seed=config.seed, class_sep=ds.class_sep,
                         test_fraction=ds.test_fraction)
    return generate(spec)


def build_model(config, split):
    """Bind the configured network, noise and prior to the training split."""
    q = split.Y.shape[1]
    out_act = "softmax" if config.likelihood == "categorical" else "identity"
    spec = nn.MlpSpec((split.X.shape[1],) + tuple(config.model.hidden) + (q,),
                      config.model.activation, out_act)
    var = config.model.noise_variance
    if var is None:
        var = config.dataset.noise_std ** 2 if (config.dataset.source == "synthetic"
                                                and config.task == "regression") else 1.0
        var = max(var, 1e-6)
    return nn.BnnModel(spec, split.X_train, split.Y_train, nn.NoiseModel((var,)),
                       nn.GaussianPrior(config.model.prior_variance), config.likelihood)
