import numpy as np
import pytest

from flowlab.core import Condition, TensorState
from flowlab.errors import InvalidConfigError, ShapeMismatchError
from flowlab.gaussian import GaussianSpec, sample_array
from flowlab.metrics import (
    MetricReport,
    empirical_moments,
    smoothness,
    structure_distance,
    truncation_bias,
)
from flowlab.rng import CounterRng
from flowlab.samplers import StepRecord, Trajectory


def state(values):
    return TensorState.from_array(values)


def traj_from_points(points):
    points = np.asarray(points, dtype=float)
    return Trajectory(
        steps=[
            StepRecord(t=1.0 - k * 0.01, x_src=p, x_main=p, eps=None, v_src=None, v_tar=None)
            for k, p in enumerate(np.atleast_2d(points))
        ]
    )


class TestSmoothness:
    def test_collinear_points_are_flat(self):
        pts = np.arange(7.0)[:, None] * np.array([[2.0, -1.0]]) + np.array([[0.5, 3.0]])
        assert smoothness(traj_from_points(pts)) == 0.0

    def test_alternating_coordinate_hand_value(self):
        # second difference of +-1 alternation is 4 at each interior point,
        # so the mean squared value is 16 in one dimension
        pts = np.array([[1.0], [-1.0], [1.0], [-1.0], [1.0]])
        assert smoothness(traj_from_points(pts)) == pytest.approx(16.0)

    def test_translation_invariance(self):
        rng = CounterRng(4)
        pts = rng.normal_array((8, 3))
        shifted = pts + np.array([5.0, -2.0, 0.5])
        assert smoothness(traj_from_points(pts)) == pytest.approx(
            smoothness(traj_from_points(shifted)), rel=1e-12
        )

    def test_quadratic_scaling(self):
        rng = CounterRng(5)
        pts = rng.normal_array((8, 2))
        base = smoothness(traj_from_points(pts))
        assert smoothness(traj_from_points(3.0 * pts)) == pytest.approx(9.0 * base, rel=1e-9)

    def test_needs_three_steps(self):
        with pytest.raises(InvalidConfigError):
            smoothness(traj_from_points(np.zeros((2, 1))))

    def test_stream_names(self):
        pts = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        traj = traj_from_points(pts)
        assert smoothness(traj, "target") == smoothness(traj, "edit") == smoothness(traj, "source")
        with pytest.raises(InvalidConfigError):
            smoothness(traj, "sideways")


class TestTruncationBias:
    def test_identical_specs_bias_exactly_zero(self):
        spec = GaussianSpec.isotropic(0.0, 1.0)
        out = truncation_bias(spec, spec, state([0.3]), 0.7, state([-0.8]), grid_steps=2_000)
        assert np.all(out.data == 0.0)

    def test_no_truncation_leaves_dense_grid_residual_only(self):
        src = GaussianSpec.isotropic(0.0, 1.0)
        tar = GaussianSpec.isotropic(2.0, 0.25)
        for grid in (5_000, 10_000):
            out = truncation_bias(src, tar, state([0.3]), 1.0, state([-0.8]), grid_steps=grid)
            assert np.linalg.norm(out.data) < 1e-3
            assert np.linalg.norm(out.data) < 1e-9  # refining keeps it at fp level

    def test_benchmark_pair_dense_value(self):
        # frozen from a 1e5-step dense run; the bias of the shifted pair is a
        # constant vector independent of the source sample and the noise
        src = GaussianSpec.isotropic(0.0, 1.0)
        tar = GaussianSpec.isotropic(2.0, 1.0)
        out = truncation_bias(src, tar, state([0.3]), 0.7, state([-0.8]), grid_steps=50_000)
        assert out.data[0] == pytest.approx(-0.787831, abs=1e-3)
        other = truncation_bias(src, tar, state([1.5]), 0.7, state([0.2]), grid_steps=50_000)
        assert other.data[0] == pytest.approx(out.data[0], abs=1e-6)

    def test_t_max_range(self):
        spec = GaussianSpec.isotropic(0.0, 1.0)
        with pytest.raises(InvalidConfigError):
            truncation_bias(spec, spec, state([0.0]), 0.0, state([0.0]))

    def test_shape_mismatch(self):
        spec = GaussianSpec.isotropic(0.0, 1.0)
        with pytest.raises(ShapeMismatchError):
            truncation_bias(spec, spec, state([0.0]), 0.5, state([0.0, 1.0]))


class TestStructureDistance:
    def test_identity(self):
        x = state([0.1, 0.2])
        assert structure_distance(x, x) == 0.0

    def test_uniform_offset(self):
        x = state([0.0, 0.0, 0.0])
        y = state([1.0, 1.0, 1.0])
        assert structure_distance(x, y) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            structure_distance(state([0.0]), state([0.0, 1.0]))


class TestEmpiricalMoments:
    def test_constant_samples(self):
        mean, cov = empirical_moments([state([2.0, -1.0])] * 5)
        assert mean.tolist() == [2.0, -1.0]
        assert np.all(cov == 0.0)

    def test_two_sample_hand_values(self):
        mean, cov = empirical_moments([state([0.0]), state([2.0])])
        assert mean[0] == 1.0
        assert cov[0, 0] == 2.0  # unbiased divisor n-1

    def test_needs_two_samples(self):
        with pytest.raises(InvalidConfigError):
            empirical_moments([state([0.0])])

    def test_convergence_rate(self):
        spec = GaussianSpec.isotropic(0.0, 1.0, dim=2)
        errors = {}
        for n in (1_000, 10_000, 100_000):
            x = sample_array(spec, n, CounterRng(33))
            mean, _ = empirical_moments(x)
            errors[n] = float(np.linalg.norm(mean))
        # errors scaled by sqrt(n) should stay within one order of magnitude
        scaled = [errors[n] * np.sqrt(n) for n in errors]
        assert max(scaled) / max(min(scaled), 1e-12) < 20.0
        assert errors[100_000] < errors[1_000]


class TestMetricReport:
    def test_rejects_non_finite(self):
        with pytest.raises(InvalidConfigError):
            MetricReport("bad", float("nan"))

    def test_carries_config_echo(self):
        rep = MetricReport("w2", 0.5, config={"seed_count": 3, "T": 20})
        assert rep.config["T"] == 20
