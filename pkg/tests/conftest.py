import numpy as np
import pytest

from fbnn import nn

_CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Print and remember one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def linear_model():
    """Centred 1-d linear regression with a (weight, bias) network: conjugate Gaussian."""
    r = np.random.default_rng(7)
    x = np.linspace(-1.5, 1.5, 30)[:, None]
    y = 0.8 * x - 0.3 + r.normal(0, 0.5, x.shape)
    return nn.BnnModel(nn.MlpSpec((1, 1)), x, y, nn.NoiseModel((0.25,)), nn.GaussianPrior(1.0))


def exact_linear_posterior(model):
    """Closed-form posterior mean and covariance for ``linear_model`` (weight, bias order)."""
    A = np.column_stack([model.X[:, 0], np.ones(model.n_data)])
    gamma = model.noise.gamma[0]
    P = A.T @ A / gamma + np.eye(2) / model.prior.variance
    cov = np.linalg.inv(P)
    return cov @ (A.T @ model.Y[:, 0] / gamma), cov
