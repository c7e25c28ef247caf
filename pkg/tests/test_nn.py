import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fbnn import nn
from fbnn.errors import InvalidInputError, NumericOverflowError


def _dense_oracle(layer_sizes, theta, X, act):
    """Forward pass written directly from the layer-major, weights-then-bias layout."""
    a = X
    pos = 0
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        d_in, d_out = layer_sizes[i], layer_sizes[i + 1]
        W = theta[pos:pos + d_in * d_out].reshape(d_out, d_in)
        pos += d_in * d_out
        b = theta[pos:pos + d_out]
        pos += d_out
        z = np.array([[sum(W[o, k] * row[k] for k in range(d_in)) + b[o]
                       for o in range(d_out)] for row in a])
        a = act(z) if i < n_layers - 1 else z
    return a


class TestForward:
    def test_zero_weights_give_output_bias(self):
        spec = nn.MlpSpec((3, 4, 2), "identity")
        theta = np.zeros(spec.n_params)
        theta[-2:] = [0.7, -1.2]
        out = nn.forward(spec, theta, np.random.default_rng(0).normal(size=(5, 3)))
        assert np.array_equal(out, np.tile([0.7, -1.2], (5, 1)))

    def test_relu_clips(self):
        spec = nn.MlpSpec((1, 1, 1), "relu")
        theta = np.array([1.0, 0.0, 1.0, 0.0])
        assert nn.forward(spec, theta, np.array([[-3.0]]))[0, 0] == 0.0

    def test_matches_dense_oracle(self):
        r = np.random.default_rng(3)
        spec = nn.MlpSpec((2, 3, 2), "tanh")
        theta = r.normal(size=spec.n_params)
        X = r.normal(size=(4, 2))
        expect = _dense_oracle(spec.layer_sizes, theta, X, np.tanh)
        assert np.max(np.abs(nn.forward(spec, theta, X) - expect)) < 1e-12

    def test_rejects_wrong_theta_length(self):
        spec = nn.MlpSpec((2, 3, 1), "tanh")
        with pytest.raises(InvalidInputError):
            nn.forward(spec, np.zeros(spec.n_params + 1), np.zeros((1, 2)))

    def test_overflow_names_a_parameter(self):
        spec = nn.MlpSpec((1, 1), ())
        theta = np.array([1e308, 0.0])
        with pytest.raises(NumericOverflowError) as info:
            nn.potential(spec, theta, np.array([[10.0]]), np.array([[0.0]]),
                         nn.NoiseModel((1.0,)))
        assert info.value.param_index == 0

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_softmax_rows_are_distributions(self, seed):
        r = np.random.default_rng(seed)
        spec = nn.MlpSpec((3, 5, 4), "tanh", "softmax")
        p = nn.forward(spec, r.normal(0, 3, spec.n_params), r.normal(0, 3, (6, 3)))
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
        assert np.all((p > 0) & (p < 1))

    def test_softmax_survives_huge_logits(self):
        p = nn.softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.all(np.isfinite(p)) and p[0, 0] == pytest.approx(1.0)


class TestLayout:
    @given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_flatten_round_trip(self, sizes, seed):
        spec = nn.MlpSpec(tuple(sizes), "tanh")
        theta = np.random.default_rng(seed).normal(size=spec.n_params)
        assert np.array_equal(nn.flatten(nn.unflatten(spec, theta)), theta)

    def test_weights_before_biases(self):
        spec = nn.MlpSpec((2, 1))
        (W, b), = nn.unflatten(spec, np.array([1.0, 2.0, 3.0]))
        assert W.tolist() == [[1.0, 2.0]] and b.tolist() == [3.0]


class TestPotential:
    def test_exact_fit_is_zero(self):
        r = np.random.default_rng(0)
        spec = nn.MlpSpec((2, 3, 1), "tanh")
        theta = r.normal(size=spec.n_params)
        X = r.normal(size=(5, 2))
        Y = nn.forward(spec, theta, X)
        assert nn.potential(spec, theta, X, Y, nn.NoiseModel((1.0,))) == 0.0

    def test_hand_values(self):
        spec = nn.MlpSpec((1, 2), ())
        zero = np.zeros(spec.n_params)
        X = np.zeros((1, 1))
        assert nn.potential(spec, zero, X, np.array([[1.0, 0.0]]),
                            nn.NoiseModel((1.0, 1.0))) == 0.5
        spec1 = nn.MlpSpec((1, 1), ())
        assert nn.potential(spec1, np.zeros(2), X, np.array([[2.0]]),
                            nn.NoiseModel((4.0,))) == 0.5

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_gaussian_potential_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        spec = nn.MlpSpec((2, 3, 2), "sigmoid")
        phi = nn.potential(spec, r.normal(size=spec.n_params), r.normal(size=(4, 2)),
                           r.normal(size=(4, 2)), nn.NoiseModel((0.5, 2.0)))
        assert phi >= 0.0

    def test_empty_data_rejected(self):
        spec = nn.MlpSpec((2, 1))
        with pytest.raises(InvalidInputError):
            nn.potential(spec, np.zeros(3), np.zeros((0, 2)), np.zeros((0, 1)),
                         nn.NoiseModel((1.0,)))

    def test_categorical_floor_keeps_potential_finite(self):
        spec = nn.MlpSpec((1, 2), (), "softmax")
        theta = np.array([500.0, -500.0, 0.0, 0.0])
        phi = nn.potential(spec, theta, np.array([[1.0]]), np.array([[0.0, 1.0]]),
                           nn.NoiseModel((1.0,)), "categorical")
        assert np.isfinite(phi) and phi == pytest.approx(-np.log(nn.PROB_FLOOR))


class TestGradient:
    def test_zero_at_exact_fit(self):
        r = np.random.default_rng(1)
        spec = nn.MlpSpec((3, 4, 2), "identity")
        theta = r.normal(size=spec.n_params)
        X = r.normal(size=(6, 3))
        g = nn.grad_potential(spec, theta, X, nn.forward(spec, theta, X), nn.NoiseModel((1.0,)))
        assert np.all(g == 0.0)

    def test_linear_model_closed_form(self):
        r = np.random.default_rng(2)
        spec = nn.MlpSpec((3, 2), ())
        theta = r.normal(size=spec.n_params)
        X = r.normal(size=(7, 3))
        Y = r.normal(size=(7, 2))
        gamma = np.array([0.5, 2.0])
        R = (nn.forward(spec, theta, X) - Y) / gamma
        expect = np.concatenate([(R.T @ X).ravel(), R.sum(axis=0)])
        g = nn.grad_potential(spec, theta, X, Y, nn.NoiseModel(tuple(gamma)))
        assert np.max(np.abs(g - expect)) < 1e-12

    def test_per_example_rows_sum_to_full_gradient(self):
        r = np.random.default_rng(4)
        spec = nn.MlpSpec((2, 3, 2), "tanh")
        theta = r.normal(size=spec.n_params)
        X = r.normal(size=(5, 2))
        G = r.normal(size=(5, 2))
        rows = nn.per_example_grads(spec, theta, X, G)
        assert np.allclose(rows.sum(axis=0), nn.backprop(spec, theta, X, G), atol=1e-12)


class TestMinibatch:
    def setup_method(self):
        r = np.random.default_rng(5)
        self.spec = nn.MlpSpec((2, 4, 1), "tanh")
        self.theta = r.normal(size=self.spec.n_params)
        self.X = r.normal(size=(10, 2))
        self.Y = r.normal(size=(10, 1))
        self.noise = nn.NoiseModel((0.3,))
        self.full = nn.grad_potential(self.spec, self.theta, self.X, self.Y, self.noise)

    def _mb(self, batch, rescale=True):
        return nn.minibatch_grad_potential(self.spec, self.theta, self.X, self.Y, self.noise,
                                           batch, rescale)

    def test_full_batch_is_exact(self):
        assert np.array_equal(self._mb(np.arange(10)), self.full)

    def test_partition_average(self):
        parts = np.array_split(np.random.default_rng(0).permutation(10), 5)
        avg = np.mean([self._mb(p) for p in parts], axis=0)
        assert np.max(np.abs(avg - self.full)) < 1e-12

    def test_single_point_rescale(self):
        one = nn.grad_potential(self.spec, self.theta, self.X[[3]], self.Y[[3]], self.noise)
        assert np.allclose(self._mb([3]), 10 * one, rtol=0, atol=1e-13)

    def test_unbiased_over_random_batches(self):
        r = np.random.default_rng(6)
        draws = np.array([self._mb(r.choice(10, 3, replace=False)) for _ in range(10_000)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - self.full) < 3 * se + 1e-12)


class TestPrior:
    def test_log_prior_at_origin(self):
        assert nn.log_prior(np.zeros(2), nn.GaussianPrior(1.0)) == pytest.approx(-np.log(2 * np.pi))

    def test_grad_log_prior(self):
        g = nn.grad_log_prior(np.array([2.0, -2.0]), nn.GaussianPrior(4.0))
        assert g.tolist() == [-0.5, 0.5]

    def test_density_integrates_to_one(self):
        prior = nn.GaussianPrior(2.5)
        total, _ = integrate.quad(lambda t: np.exp(nn.log_prior(np.array([t]), prior)),
                                  -40, 40, epsabs=1e-12)
        assert abs(total - 1) < 1e-8

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(InvalidInputError):
            nn.GaussianPrior(0.0)


class TestNegLogPosterior:
    def setup_method(self):
        r = np.random.default_rng(8)
        self.spec = nn.MlpSpec((2, 3, 1), "tanh")
        self.theta = r.normal(size=self.spec.n_params)
        self.X = r.normal(size=(6, 2))
        self.Y = r.normal(size=(6, 1))
        self.noise = nn.NoiseModel((1.0,))

    def test_flat_prior_limit(self):
        prior = nn.GaussianPrior(1e12)
        u = nn.neg_log_posterior(self.spec, self.theta, self.X, self.Y, self.noise, prior)
        const = nn.log_prior(np.zeros_like(self.theta), prior)
        phi = nn.potential(self.spec, self.theta, self.X, self.Y, self.noise)
        assert abs(u + const - phi) < 1e-6

    def test_at_origin_with_exact_data(self):
        zero = np.zeros(self.spec.n_params)
        Y = nn.forward(self.spec, zero, self.X)
        prior = nn.GaussianPrior(1.0)
        u = nn.neg_log_posterior(self.spec, zero, self.X, Y, self.noise, prior)
        assert u == -nn.log_prior(zero, prior)

    def test_prior_change_is_additive(self):
        a, b = nn.GaussianPrior(1.0), nn.GaussianPrior(3.0)
        ua = nn.neg_log_posterior(self.spec, self.theta, self.X, self.Y, self.noise, a)
        ub = nn.neg_log_posterior(self.spec, self.theta, self.X, self.Y, self.noise, b)
        delta = nn.log_prior(self.theta, a) - nn.log_prior(self.theta, b)
        assert ub - ua == pytest.approx(delta, abs=1e-12)


def test_model_rejects_empty_data():
    with pytest.raises(InvalidInputError):
        nn.BnnModel(nn.MlpSpec((2, 1)), np.zeros((0, 2)), np.zeros((0, 1)), nn.NoiseModel((1.0,)))
