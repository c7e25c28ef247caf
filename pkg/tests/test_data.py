import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbnn.data import (
    DatasetSplit,
    SyntheticSpec,
    gen_classification,
    gen_regression,
    load_csv,
    save_csv,
)
from fbnn.errors import InvalidInputError


def _lstsq_fit(X, y):
    A = np.column_stack([X, np.ones(X.shape[0])])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, A @ coef


def _linear_accuracy(ds):
    # least-squares discriminant on +-1 targets, fitted on train and scored on test
    coef, _ = _lstsq_fit(ds.X_train, 2.0 * ds.labels[ds.train_idx] - 1.0)
    score = np.column_stack([ds.X_test, np.ones(ds.test_idx.size)]) @ coef
    return np.mean((score > 0) == (ds.labels_test == 1))


class TestRegression:
    def test_noiseless_recovery(self):
        ds = gen_regression(SyntheticSpec(noise_std=0.0, n_samples=200))
        coef, fitted = _lstsq_fit(ds.X, ds.Y[:, 0])
        assert np.mean((fitted - ds.Y[:, 0]) ** 2) < 1e-10
        assert np.allclose(coef[:-1], ds.coef, atol=1e-8)
        assert np.count_nonzero(ds.coef) == 5

    def test_same_seed_same_data(self):
        a = gen_regression(SyntheticSpec(seed=3, n_samples=50))
        b = gen_regression(SyntheticSpec(seed=3, n_samples=50))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
        assert np.array_equal(a.test_idx, b.test_idx)

    def test_null_signal(self):
        ds = gen_regression(SyntheticSpec(n_informative=0, n_samples=4000, seed=1))
        y = ds.Y[:, 0]
        # out-of-sample R^2 of an OLS fit on pure noise
        coef, _ = _lstsq_fit(ds.X_train, y[ds.train_idx])
        pred = np.column_stack([ds.X_test, np.ones(ds.test_idx.size)]) @ coef
        yt = y[ds.test_idx]
        r2 = 1 - np.sum((yt - pred) ** 2) / np.sum((yt - yt.mean()) ** 2)
        assert abs(r2) < 0.05

    def test_columns_standardised(self):
        ds = gen_regression(SyntheticSpec(n_samples=100))
        assert np.allclose(ds.X.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(ds.X.std(axis=0), 1, atol=1e-12)

    @pytest.mark.parametrize("kw", [{"n_samples": 5}, {"n_informative": 11},
                                    {"noise_std": -1.0}, {"task": "ranking"}])
    def test_invalid_spec(self, kw):
        with pytest.raises(InvalidInputError):
            SyntheticSpec(**kw)


class TestClassification:
    def test_well_separated(self):
        ds = gen_classification(SyntheticSpec("classification", n_features=20, class_sep=10.0))
        assert _linear_accuracy(ds) > 0.99

    def test_no_separation(self):
        accs = [_linear_accuracy(gen_classification(
            SyntheticSpec("classification", n_features=20, class_sep=0.0, seed=s)))
            for s in range(5)]
        assert abs(np.mean(accs) - 0.5) < 0.03

    @given(st.integers(10, 301), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_balanced_one_hot(self, n, seed):
        ds = gen_classification(SyntheticSpec("classification", n_samples=n, seed=seed))
        counts = np.bincount(ds.labels, minlength=2)
        assert abs(counts[1] - counts[0]) <= 1
        assert np.array_equal(ds.Y.argmax(axis=1), ds.labels) and np.all(ds.Y.sum(axis=1) == 1)


class TestCsv:
    def _write(self, tmp_path, text):
        path = tmp_path / "d.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_hand_written_round_trip(self, tmp_path):
        path = self._write(tmp_path, "a,b,y\n1,2,10\n3,4,20\n5,6,30\n7,8,40\n")
        ds = load_csv(path, "y", test_fraction=0.25, standardize=False)
        assert np.array_equal(ds.X, [[1, 2], [3, 4], [5, 6], [7, 8]])
        assert np.array_equal(ds.Y[:, 0], [10, 20, 30, 40])
        assert ds.feature_names == ["a", "b"] and ds.test_idx.size == 1

    def test_train_statistics_only(self, tmp_path):
        rows = ["x,y"] + [f"{v},0" for v in range(8)] + ["100,0", "200,0"]
        path = self._write(tmp_path, "\n".join(rows) + "\n")
        ds = load_csv(path, "y", test_fraction=0.2, seed=0)
        train = ds.X_train[:, 0]
        assert abs(train.mean()) < 1e-10 and abs(train.std() - 1) < 1e-10
        raw = np.arange(10.0)
        raw[8:] = [100.0, 200.0]
        mu, sd = raw[ds.train_idx].mean(), raw[ds.train_idx].std()
        assert np.allclose(ds.X_test[:, 0], (raw[ds.test_idx] - mu) / sd, atol=1e-12)

    def test_stratified_classification(self, tmp_path):
        rows = ["x,label"] + [f"{i},{i % 2 * 3}" for i in range(20)]
        ds = load_csv(self._write(tmp_path, "\n".join(rows)), "label", "classification",
                      test_fraction=0.2)
        assert ds.Y.shape == (20, 2)
        assert np.bincount(ds.labels_test).tolist() == [2, 2]

    @pytest.mark.parametrize("body, needle", [
        ("a,y\n1,2\n,3\n", "missing"),
        ("a,y\n1,2\nabc,3\n", "row 3"),
        ("a,y\n1,2\n1,2,3\n", "fields"),
    ])
    def test_rejections(self, tmp_path, body, needle):
        with pytest.raises(InvalidInputError, match=needle):
            load_csv(self._write(tmp_path, body), "y")

    def test_missing_target(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_csv(self._write(tmp_path, "a,b\n1,2\n"), "y")

    def test_export_reimport(self, tmp_path):
        ds = gen_regression(SyntheticSpec(n_samples=40, seed=9))
        save_csv(ds, tmp_path / "out.csv")
        back = load_csv(tmp_path / "out.csv", "y", standardize=False)
        assert np.max(np.abs(back.X - ds.X)) < 1e-12
        assert np.max(np.abs(back.Y - ds.Y)) < 1e-12


def test_split_must_partition():
    with pytest.raises(InvalidInputError):
        DatasetSplit(np.zeros((3, 1)), np.zeros(3), "regression", [0, 1], [1])
