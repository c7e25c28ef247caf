"""Synthetic data generators and CSV ingestion."""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

TASKS = ("regression", "classification")


@dataclass
class DatasetSplit:
    """Inputs, targets and a train/test partition.

    For classification ``Y`` is one-hot and ``labels`` holds integer classes.
    """

    X: np.ndarray
    Y: np.ndarray
    task: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    labels: np.ndarray = None
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        n = self.X.shape[0]
        if self.Y.shape[0] != n:
            raise InvalidInputError("X and Y row counts differ")
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.test_idx = np.asarray(self.test_idx, dtype=int)
        both = np.concatenate([self.train_idx, self.test_idx])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise InvalidInputError("train/test indices must partition 0..N-1")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_classes(self):
        return self.Y.shape[1] if self.task == "classification" else 0

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def Y_train(self):
        return self.Y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def Y_test(self):
        return self.Y[self.test_idx]

    @property
    def labels_test(self):
        return None if self.labels is None else self.labels[self.test_idx]


@dataclass
class SyntheticSpec:
    task: str = "regression"
    n_samples: int = 2000
    n_features: int = 10
    n_informative: int = 5
    noise_std: float = 0.5
    seed: int = 0
    class_sep: float = 1.0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        if self.n_samples < 10:
            raise InvalidInputError("n_samples must be >= 10")
        if not 0 <= self.n_informative <= self.n_features:
            raise InvalidInputError("need 0 <= n_informative <= n_features")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidInputError("test_fraction must lie in (0, 1)")


def _standardize(X, ref):
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def random_split(n, test_fraction, rng):
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def stratified_split(labels, test_fraction, rng):
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(test_fraction * idx.size))
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def gen_regression(spec):
    """Linear-Gaussian regression data.

    ``X`` has standardised N(0, 1) columns; ``y = X w + eps`` where ``w`` has
    ``n_informative`` nonzero entries and ``eps ~ N(0, noise_std^2)``.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n_samples, spec.n_features))
    X, _, _ = _standardize(X, X)
    w = np.zeros(spec.n_features)
    informative = rng.choice(spec.n_features, spec.n_informative, replace=False)
    w[informative] = rng.uniform(0.5, 1.5, spec.n_informative) * rng.choice([-1, 1], spec.n_informative)
    y = X @ w + spec.noise_std * rng.standard_normal(spec.n_samples)
    train, test = random_split(spec.n_samples, spec.test_fraction, rng)
    ds = DatasetSplit(X, y, "regression", train, test,
                      feature_names=[f"x{i}" for i in range(spec.n_features)])
    ds.coef = w
    return ds


def gen_classification(spec):
    """Balanced two-class Gaussian clusters.

    Class ``c`` has mean ``+-class_sep / 2`` along a random unit direction in
    the informative subspace; remaining features are pure noise.
    """
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n_samples, spec.n_features
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    X = rng.standard_normal((n, p))
    if spec.n_informative > 0:
        direction = rng.standard_normal(spec.n_informative)
        direction /= np.linalg.norm(direction)
        sign = np.where(labels == 1, 0.5, -0.5)
        X[:, :spec.n_informative] += spec.class_sep * sign[:, None] * direction[None]
    Y = np.eye(2)[labels]
    train, test = stratified_split(labels, spec.test_fraction, rng)
    return DatasetSplit(X, Y, "classification", train, test, labels=labels,
                        feature_names=[f"x{i}" for i in range(p)])


def generate(spec):
    return gen_regression(spec) if spec.task == "regression" else gen_classification(spec)


def _parse_float(cell, row, col):
    s = cell.strip()
    if s == "" or s.lower() in ("na", "nan", "null", "none", "?"):
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise InvalidInputError(f"non-numeric cell {cell!r} at row {row}, column {col!r}") from None


def load_csv(path, target_column, task="regression", test_fraction=0.2, seed=0,
             standardize=True):
    """Read a numeric CSV with a header row into a :class:`DatasetSplit`.

    Features are z-scored with training-split statistics only. Classification
    targets are mapped to ``0..K-1`` in sorted order of their values and the
    split is stratified. Missing values are rejected.
    """
    if task not in TASKS:
        raise InvalidInputError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        if target_column not in header:
            raise InvalidInputError(f"target column {target_column!r} not in header")
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
            rows.append([_parse_float(c, r, header[j]) for j, c in enumerate(row)])
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    n_missing = int(np.isnan(data).sum())
    if n_missing:
        raise InvalidInputError(f"{path}: {n_missing} missing values; impute before loading")
    t = header.index(target_column)
    feats = [h for j, h in enumerate(header) if j != t]
    X = np.delete(data, t, axis=1)
    y = data[:, t]
    rng = np.random.default_rng(seed)
    if task == "classification":
        classes, labels = np.unique(y, return_inverse=True)
        Y = np.eye(classes.size)[labels]
        train, test = stratified_split(labels, test_fraction, rng)
    else:
        labels = None
        Y = y.reshape(-1, 1)
        train, test = random_split(X.shape[0], test_fraction, rng)
    if standardize:
        X, _, _ = _standardize(X, X[train])
    return DatasetSplit(X, Y, task, train, test, labels=labels, feature_names=feats)


def save_csv(ds, path, target_column="y"):
    """Write features plus the target (integer label for classification)."""
    target = ds.labels if ds.task == "classification" else ds.Y[:, 0]
    names = ds.feature_names or [f"x{i}" for i in range(ds.X.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + [target_column])
        for i in range(ds.n):
            w.writerow([repr(float(v)) for v in ds.X[i]] + [repr(float(target[i]))])
