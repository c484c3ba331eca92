import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qifsnn.dynamics import (
    COBWEB_HEADER,
    PHASE_HEADER,
    Region,
    Stability,
    Termination,
    classify_fixed_points,
    classify_region,
    cobweb_trajectory,
    phase_portrait_samples,
    stability_derivative,
    u_min,
    write_cobweb_csv,
    write_phase_csv,
)
from qifsnn.neuron import QifParams, qif_step

DEFAULT = QifParams()


def iterate(u0, steps, p=DEFAULT):
    # independent scalar iteration of a (u - u_1)(u - u_2)
    out = [u0]
    for _ in range(steps):
        u = out[-1]
        out.append(p.a * (u - p.u_1) * (u - p.u_2))
    return out


class TestStability:
    def test_derivative_values(self):
        assert stability_derivative(0.0, DEFAULT) == -0.125
        assert stability_derivative(4.5, DEFAULT) == 2.125
        assert stability_derivative(2.25, DEFAULT) == 1.0

    def test_derivative_matches_finite_difference(self):
        for u in np.linspace(-2, 5, 15):
            h = 1e-6
            fd = (qif_step(u + h, 0, DEFAULT) - qif_step(u - h, 0, DEFAULT)) / (2 * h)
            assert stability_derivative(u, DEFAULT) == pytest.approx(fd, abs=1e-8)

    def test_default_classification(self):
        v = classify_fixed_points(DEFAULT)
        assert [(x.fixed_point, x.derivative, x.label) for x in v] == [
            (0.0, -0.125, Stability.STABLE),
            (4.5, 2.125, Stability.UNSTABLE),
        ]

    def test_double_root_roots(self):
        # a=0.25, u_r=0, u_c=4 -> u_1=u_2=0 -> g(0)=0, g(4)=2
        p = QifParams.from_fixed_points(a=0.25, u_r=0.0, u_c=4.0, u_th=0.0)
        v = classify_fixed_points(p)
        assert [(x.derivative, x.label) for x in v] == [(0.0, Stability.STABLE), (2.0, Stability.UNSTABLE)]

    def test_degenerate_single_fixed_point(self):
        # u_1 = u_2 = -1/(4a) makes the fixed-point quadratic a perfect square
        p = QifParams.from_roots(a=1.0, u_1=-0.25, u_2=-0.25, u_th=0.0)
        assert p.u_r == p.u_c == 0.25
        v = classify_fixed_points(p)
        assert len(v) == 1
        assert v[0].derivative == pytest.approx(1.0)
        assert v[0].label is Stability.INCONCLUSIVE

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            classify_fixed_points(DEFAULT, tol=0.0)


class TestRegions:
    @pytest.mark.parametrize("u, region", [(1.0, Region.GREEN), (0.25, Region.BLUE), (-0.1, Region.RED),
                                           (0.0, Region.BLUE), (0.5, Region.BLUE)])
    def test_examples(self, u, region):
        assert classify_region(u, DEFAULT) is region

    def test_partition_on_dense_grid(self):
        lo, hi = 0.0, 0.5
        for u in np.linspace(-2, 3, 20001):
            checks = [u > hi, lo <= u <= hi, u < lo]
            assert sum(checks) == 1
            expected = [Region.GREEN, Region.BLUE, Region.RED][checks.index(True)]
            assert classify_region(u, DEFAULT) is expected


class TestUMin:
    def test_default(self):
        assert u_min(DEFAULT) == -1 / 64

    def test_equal_roots(self):
        assert u_min(QifParams.from_roots(u_1=0.0, u_2=0.0, u_th=0.0)) == 0.0

    def test_unit_gain(self):
        assert u_min(QifParams.from_roots(a=1.0, u_1=0.0, u_2=2.0, u_th=2.0)) == -1.0

    def test_brute_force_grid(self):
        grid = np.linspace(0.0, 0.5, 100_001)
        assert qif_step(grid, 0.0, DEFAULT).min() == pytest.approx(u_min(DEFAULT), abs=1e-9)


class TestTrajectories:
    def test_converges_from_small_positive(self):
        t = cobweb_trajectory(0.3, DEFAULT)
        assert t.terminated is Termination.CONVERGED
        ref = iterate(0.3, 3)
        np.testing.assert_allclose(t.values[:4], ref)
        assert abs(ref[3]) < abs(ref[1]) < abs(ref[0])
        assert abs(t.values[-1]) < 1e-9

    def test_fixed_point_is_constant(self):
        t = cobweb_trajectory(4.5, DEFAULT)
        assert t.terminated is Termination.CONVERGED
        assert all(u == 4.5 for u in t.values)

    def test_diverges_above_critical(self):
        t = cobweb_trajectory(4.6, DEFAULT, div_bound=100)
        assert t.terminated is Termination.DIVERGED
        assert np.all(np.diff(t.values) > 0)

    def test_max_steps(self):
        t = cobweb_trajectory(4.5 + 1e-6, DEFAULT, max_steps=3)
        assert t.terminated is Termination.MAX_STEPS and len(t.points) == 4

    def test_consecutive_points_follow_map(self):
        t = cobweb_trajectory(-0.4, DEFAULT)
        for (k0, u0), (k1, u1) in zip(t.points, t.points[1:]):
            assert k1 == k0 + 1
            assert u1 == qif_step(u0, 0.0, DEFAULT)

    @given(st.floats(-0.4, 0.4))
    def test_neighbourhood_of_zero_attracted(self, u0):
        ref = iterate(u0, 50)
        assert min(abs(u) for u in ref) < 1e-6
        t = cobweb_trajectory(u0, DEFAULT, max_steps=50)
        assert abs(t.values[-1]) < 1e-6 or t.terminated is Termination.CONVERGED

    @given(st.floats(4.5 + 1e-6, 50.0))
    def test_above_critical_strictly_increasing(self, u0):
        t = cobweb_trajectory(u0, DEFAULT, max_steps=200, div_bound=1e3)
        v = t.values
        assert np.all(np.diff(v) > 0)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            cobweb_trajectory(0.0, DEFAULT, max_steps=0)
        with pytest.raises(ValueError):
            cobweb_trajectory(0.0, DEFAULT, div_bound=4.0)


class TestPhasePortrait:
    def test_examples(self):
        assert phase_portrait_samples([0.0], DEFAULT) == [(0.0, 0.0)]
        assert phase_portrait_samples([-1.0], DEFAULT) == [(-1.0, 1.375)]
        assert phase_portrait_samples([2.0], DEFAULT) == [(2.0, -1.25)]

    def test_zero_delta_at_fixed_points_only(self):
        grid = np.linspace(-1, 5, 6001)
        samples = np.array(phase_portrait_samples(grid, DEFAULT))
        zeros = samples[np.abs(samples[:, 1]) < 1e-12, 0]
        np.testing.assert_allclose(zeros, [DEFAULT.u_r, DEFAULT.u_c], atol=1e-9)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            phase_portrait_samples([], DEFAULT)


def test_csv_headers():
    buf = io.StringIO()
    write_cobweb_csv(buf, [cobweb_trajectory(0.3, DEFAULT, max_steps=2)])
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(COBWEB_HEADER)
    assert len(lines) == 3
    buf = io.StringIO()
    write_phase_csv(buf, phase_portrait_samples([0.0], DEFAULT))
    assert buf.getvalue().splitlines() == [",".join(PHASE_HEADER), "0.0,0.0"]
