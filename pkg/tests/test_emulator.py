import numpy as np
import pytest

from fbnn import nn
from fbnn.emulator import (
    CalibrationSet,
    EmulatedPotential,
    EmulatorModel,
    EmulatorSpec,
    choose_reference,
    collect_calibration,
    emulate_forward,
    train_emulator,
)
from fbnn.errors import InvalidInputError
from fbnn.samplers import SamplerConfig


@pytest.fixture
def small_model():
    r = np.random.default_rng(0)
    X = r.normal(size=(40, 3))
    spec = nn.MlpSpec((3, 4, 1), "tanh")
    Y = nn.forward(spec, r.normal(size=spec.n_params), X) + 0.1 * r.normal(size=(40, 1))
    return nn.BnnModel(spec, X, Y, nn.NoiseModel((0.01,)))


class PerfectEmulator:
    """Stands in for a trained network by evaluating the true forward map."""

    def __init__(self, model, ref):
        self.model, self.ref = model, ref

    def predict(self, theta):
        return nn.forward(self.model.spec, theta, self.model.X[self.ref]).ravel()


def _fixed_cal(thetas, outputs):
    return CalibrationSet(thetas, outputs, np.arange(3))


class TestCalibration:
    def test_two_pairs(self, small_model):
        cal, last, trace = collect_calibration(small_model, "pcn", 2, SamplerConfig(),
                                               np.random.default_rng(1))
        assert cal.J == 2 and cal.thetas.shape == (2, small_model.dim)
        assert np.array_equal(last.theta, cal.thetas[1])

    @pytest.mark.parametrize("kernel", ["sghmc", "pcn"])
    def test_outputs_are_exact_forward_passes(self, small_model, kernel):
        ref = np.array([0, 5, 7, 30])
        cal, _, _ = collect_calibration(small_model, kernel, 20, SamplerConfig(sghmc_lr=1e-4),
                                        np.random.default_rng(2), ref_indices=ref)
        for th, out in zip(cal.thetas, cal.outputs):
            assert np.array_equal(out, nn.forward(small_model.spec, th, small_model.X[ref]).ravel())

    def test_scalar_mode_records_potential(self, small_model):
        cal, _, _ = collect_calibration(small_model, "pcn", 10, SamplerConfig(),
                                        np.random.default_rng(3), mode="scalar_potential")
        assert cal.outputs.shape == (10, 1)
        assert np.allclose(cal.outputs[:, 0], [small_model.potential(t) for t in cal.thetas])

    def test_bad_reference_rejected(self, small_model):
        with pytest.raises(InvalidInputError):
            collect_calibration(small_model, "pcn", 5, SamplerConfig(), np.random.default_rng(0),
                                ref_indices=np.array([0, 40]))

    def test_calibration_kernel_restricted(self, small_model):
        with pytest.raises(InvalidInputError):
            collect_calibration(small_model, "mh", 5, SamplerConfig(), np.random.default_rng(0))

    def test_reference_cap(self):
        r = np.random.default_rng(0)
        assert choose_reference(100, r).tolist() == list(range(100))
        ref = choose_reference(5000, r)
        assert ref.size == 512 and np.all(np.diff(ref) > 0)

    def test_csv_written(self, small_model, tmp_path):
        cal, _, _ = collect_calibration(small_model, "pcn", 4, SamplerConfig(),
                                        np.random.default_rng(0), ref_indices=np.arange(2))
        cal.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].split(",")[-1] == "out_1"


class TestTraining:
    def test_constant_target(self):
        r = np.random.default_rng(0)
        thetas = r.normal(size=(60, 4))
        cal = _fixed_cal(thetas, np.full((60, 3), 2.5))
        em = train_emulator(cal, EmulatorSpec(), np.random.default_rng(1))
        assert em.validation_sup_error < 1e-3
        assert np.array_equal(em.out_scale, np.zeros(3))

    def test_varying_column_keeps_its_scale(self):
        r = np.random.default_rng(7)
        thetas = r.normal(size=(40, 2))
        out = np.column_stack([np.full(40, -1.0), thetas[:, 0]])
        em = train_emulator(_fixed_cal(thetas, out), EmulatorSpec(epochs=50),
                            np.random.default_rng(8))
        assert em.out_scale[0] == 0.0 and em.out_scale[1] > 0.5
        assert np.all(emulate_forward(em, r.normal(size=(5, 2)))[:, 0] == -1.0)

    def test_memorises_a_repeated_pair(self):
        cal = _fixed_cal(np.tile([0.3, -1.0, 2.0], (20, 1)), np.tile([1.0, -4.0], (20, 1)))
        em = train_emulator(cal, EmulatorSpec(), np.random.default_rng(2))
        assert em.validation_sup_error < 1e-3

    def test_linear_map(self):
        r = np.random.default_rng(3)
        A = r.normal(size=(3, 5))
        thetas = r.uniform(-1, 1, size=(1000, 5))
        cal = _fixed_cal(thetas, thetas @ A.T)
        # a smaller Adam step than the default keeps the fixed-step jitter below tolerance
        espec = EmulatorSpec(hidden_sizes=(32,), dropout_rate=0.0, epochs=1000,
                             learning_rate=3e-4)
        em = train_emulator(cal, espec, np.random.default_rng(4))
        assert em.validation_sup_error < 0.01

    def test_seeded_training_is_reproducible(self):
        r = np.random.default_rng(5)
        cal = _fixed_cal(r.normal(size=(30, 2)), r.normal(size=(30, 2)))
        espec = EmulatorSpec(epochs=20)
        a = train_emulator(cal, espec, np.random.default_rng(6))
        b = train_emulator(cal, espec, np.random.default_rng(6))
        assert np.array_equal(a.weights, b.weights)
        assert a.validation_sup_error == b.validation_sup_error >= 0

    def test_too_few_pairs(self):
        with pytest.raises(InvalidInputError):
            train_emulator(_fixed_cal(np.zeros((5, 2)), np.zeros((5, 1))), EmulatorSpec())

    @pytest.mark.parametrize("kw", [{"dropout_rate": 1.0}, {"epochs": 0},
                                    {"validation_fraction": 0.0}, {"learning_rate": -1.0}])
    def test_spec_validation(self, kw):
        with pytest.raises(InvalidInputError):
            EmulatorSpec(**kw)


class TestForward:
    def _net(self):
        net = nn.MlpSpec((3, 5, 2), "relu")
        return net, np.random.default_rng(0).normal(size=net.n_params)

    def test_deterministic(self):
        net, w = self._net()
        em = EmulatorModel.from_weights(net, w)
        th = np.array([0.1, -0.3, 2.0])
        assert np.array_equal(em.predict(th), em.predict(th))

    def test_zero_weights(self):
        net, _ = self._net()
        w = np.zeros(net.n_params)
        w[-2:] = [3.0, -1.0]
        assert np.array_equal(EmulatorModel.from_weights(net, w).predict(np.ones(3)), [3.0, -1.0])

    def test_matches_network_forward(self):
        net, w = self._net()
        th = np.random.default_rng(1).normal(size=(4, 3))
        out = emulate_forward(EmulatorModel.from_weights(net, w), th)
        assert np.max(np.abs(out - nn.forward(net, w, th))) < 1e-12

    def test_wrong_input_length(self):
        net, w = self._net()
        with pytest.raises(InvalidInputError):
            EmulatorModel.from_weights(net, w).predict(np.ones(4))


class TestEmulatedPotential:
    def test_perfect_emulator_on_full_reference(self, small_model):
        ref = np.arange(small_model.n_data)
        pe = EmulatedPotential(PerfectEmulator(small_model, ref), small_model.Y,
                               small_model.noise, small_model.n_data)
        assert pe.scale == 1.0
        th = np.random.default_rng(0).normal(size=small_model.dim)
        assert pe(th) == pytest.approx(small_model.potential(th), rel=1e-13)

    def test_subset_is_rescaled(self, small_model):
        ref = np.arange(10)
        pe = EmulatedPotential(PerfectEmulator(small_model, ref), small_model.Y[ref],
                               small_model.noise, small_model.n_data)
        sub = nn.BnnModel(small_model.spec, small_model.X[ref], small_model.Y[ref],
                          small_model.noise)
        th = np.random.default_rng(1).normal(size=small_model.dim)
        assert pe(th) == pytest.approx(4.0 * sub.potential(th), rel=1e-13)

    def test_error_bound_on_prior_draws(self, small_model):
        ref = np.arange(small_model.n_data)
        net = nn.MlpSpec((small_model.dim, 8, small_model.n_data), "relu")
        w = 0.1 * np.random.default_rng(2).normal(size=net.n_params)
        em = EmulatorModel.from_weights(net, w)
        pe = EmulatedPotential(em, small_model.Y, small_model.noise, small_model.n_data)
        r = np.random.default_rng(3)
        inv_g = 1.0 / small_model.noise.gamma[0]
        for th in r.normal(size=(100, small_model.dim)):
            g = nn.forward(small_model.spec, th, small_model.X).ravel()
            ge = em.predict(th)
            y = small_model.Y.ravel()
            sup = np.max(np.abs(g - ge))
            M = 0.5 * inv_g * np.max(np.abs(g + ge - 2 * y))
            assert abs(small_model.potential(th) - pe(th)) <= M * g.size * sup * (1 + 1e-12)

    def test_gradient_matches_differences(self, small_model):
        r = np.random.default_rng(4)
        cal = CalibrationSet(r.normal(size=(30, small_model.dim)), r.normal(size=(30, 5)),
                             np.arange(5))
        em = train_emulator(cal, EmulatorSpec(hidden_sizes=(6, 6), epochs=5, dropout_rate=0.0),
                            np.random.default_rng(5))
        pe = EmulatedPotential(em, small_model.Y[:5], small_model.noise, small_model.n_data)
        th = r.normal(size=small_model.dim)
        h = 1e-6
        fd = np.array([(pe(th + h * e) - pe(th - h * e)) / (2 * h)
                       for e in np.eye(small_model.dim)])
        assert np.allclose(pe.grad(th), fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))

    def test_scalar_mode_returns_output(self):
        net = nn.MlpSpec((2, 1))
        em = EmulatorModel.from_weights(net, np.array([1.0, 2.0, 0.5]), mode="scalar_potential")
        assert EmulatedPotential(em)(np.array([1.0, 1.0])) == 3.5
