import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from qifsnn.errors import InvalidParams, NegativeDiscriminant, NonFiniteValue, ShapeMismatch
from qifsnn.neuron import (
    LifParams,
    NeuronState,
    QifParams,
    derive_u1_u2,
    heaviside,
    lif_update,
    qif_step,
    qif_update,
    recover_fixed_points,
)

DEFAULT = QifParams()


class TestDeriveRoots:
    def test_default_parameters(self):
        assert derive_u1_u2(0.25, 0.0, 4.5) == (0.0, 0.5)

    def test_double_root(self):
        # delta = 16 - 2*4/0.25 + 16 = 0
        assert derive_u1_u2(0.25, 0.0, 4.0) == (0.0, 0.0)

    def test_unit_gain(self):
        u_1, u_2 = derive_u1_u2(1.0, 0.0, 3.0)
        assert (u_1, u_2) == (0.0, 2.0)
        assert u_1 + u_2 + 1.0 == 0.0 + 3.0

    def test_negative_discriminant(self):
        # delta = 1 - 6 + 1 = -4
        with pytest.raises(NegativeDiscriminant):
            derive_u1_u2(1.0, 1.0, 2.0)

    @pytest.mark.parametrize("a, u_r, u_c", [(0.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (0.25, 1.0, 1.0), (0.25, 2.0, 1.0)])
    def test_invalid(self, a, u_r, u_c):
        with pytest.raises(InvalidParams):
            derive_u1_u2(a, u_r, u_c)


class TestRecoverFixedPoints:
    def test_default(self):
        assert recover_fixed_points(0.25, 0.0, 0.5) == (0.0, 4.5)

    def test_double_root_inverse(self):
        assert recover_fixed_points(0.25, 0.0, 0.0) == (0.0, 4.0)

    def test_round_trip_default(self):
        assert derive_u1_u2(0.25, *recover_fixed_points(0.25, 0.0, 0.5)) == (0.0, 0.5)

    def test_no_real_roots(self):
        # (s + 1/a)^2 - 4p with s=-2, p=1, a=1: 1 - 4 < 0
        with pytest.raises(NegativeDiscriminant):
            recover_fixed_points(1.0, -1.0, -1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.floats(0.05, 2.0),
        u_r=st.floats(-3.0, 3.0),
        gap=st.floats(0.01, 6.0),
    )
    def test_duality_property(self, a, u_r, gap):
        u_c = u_r + gap
        disc = (u_c - u_r) ** 2 - 2 * (u_r + u_c) / a + 1 / a**2
        assume(disc >= 1e-6)
        u_1, u_2 = derive_u1_u2(a, u_r, u_c)
        r, c = recover_fixed_points(a, u_1, u_2)
        scale = max(1.0, abs(u_r), abs(u_c), 1 / a)
        assert r == pytest.approx(u_r, abs=1e-9 * scale)
        assert c == pytest.approx(u_c, abs=1e-9 * scale)


class TestQifParams:
    def test_default_instance(self):
        p = QifParams()
        assert (p.a, p.u_r, p.u_c, p.u_1, p.u_2, p.u_th, p.u_reset) == (0.25, 0.0, 4.5, 0.0, 0.5, 0.5, 0.0)
        assert QifParams.from_roots() == p
        assert QifParams.from_fixed_points() == p

    def test_threshold_bounds(self):
        with pytest.raises(InvalidParams):
            QifParams.from_roots(u_th=0.4)  # below max(u_1, u_2)
        with pytest.raises(InvalidParams):
            QifParams.from_roots(u_th=4.6)  # above u_c
        assert QifParams.from_roots(u_th=4.5).u_th == 4.5  # boundary admitted

    def test_inconsistent_roots_rejected(self):
        with pytest.raises(InvalidParams):
            QifParams(a=0.25, u_r=0.0, u_c=4.5, u_1=0.0, u_2=0.6, u_th=0.6)

    def test_immutable(self):
        with pytest.raises(AttributeError):
            DEFAULT.a = 0.5

    def test_lif_params(self):
        with pytest.raises(InvalidParams):
            LifParams(beta=1.0)
        with pytest.raises(InvalidParams):
            LifParams(u_th=0.0)


class TestQifStep:
    @pytest.mark.parametrize(
        "u, expected",
        [(0.0, 0.0), (4.5, 4.5), (0.25, -0.015625), (-1.0, 0.375)],
    )
    def test_values(self, u, expected):
        assert qif_step(u, 0.0, DEFAULT) == expected

    def test_input_is_additive(self):
        assert qif_step(1.0, 0.3, DEFAULT) == pytest.approx(qif_step(1.0, 0.0, DEFAULT) + 0.3)

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(0.05, 1.0), u_r=st.floats(-2, 2), gap=st.floats(0.1, 5))
    def test_fixed_points_preserved(self, a, u_r, gap):
        u_c = u_r + gap
        disc = (u_c - u_r) ** 2 - 2 * (u_r + u_c) / a + 1 / a**2
        assume(disc >= 1e-6)
        u_1, u_2 = derive_u1_u2(a, u_r, u_c)
        assume(max(u_1, u_2) <= u_c)
        p = QifParams(a=a, u_r=u_r, u_c=u_c, u_1=u_1, u_2=u_2, u_th=max(u_1, u_2))
        for fp in (u_r, u_c):
            assert qif_step(fp, 0.0, p) == pytest.approx(fp, abs=1e-9 * max(1.0, abs(fp), 1 / a))

    @given(u=st.floats(0.5, 4.5, exclude_min=True))
    def test_green_region_attenuates(self, u):
        assert qif_step(u, 0.0, DEFAULT) <= u

    @given(u=st.floats(-1e3, -1e-6))
    def test_red_region_sign_flip(self, u):
        assert qif_step(u, 0.0, DEFAULT) > 0


class TestUpdates:
    def test_qif_reset_masks_leak(self):
        s = qif_update(NeuronState([0.6], [1.0]), [0.2], DEFAULT)
        assert s.u[0] == pytest.approx(0.2) and s.o[0] == 0.0

    def test_qif_subthreshold(self):
        s = qif_update(NeuronState([0.4], [0.0]), [0.5], DEFAULT)
        assert s.u[0] == pytest.approx(0.49) and s.o[0] == 0.0

    def test_qif_crosses_threshold(self):
        s = qif_update(NeuronState([0.4], [0.0]), [0.52], DEFAULT)
        assert s.u[0] == pytest.approx(0.51) and s.o[0] == 1.0

    def test_spike_at_equality(self):
        s = qif_update(NeuronState([0.0], [0.0]), [0.5], DEFAULT)
        assert s.o[0] == 1.0

    @pytest.mark.parametrize(
        "u, o, i, expected_u, expected_o",
        [(0.0, 0.0, 0.0, 0.0, 0.0), (0.4, 0.0, 0.2, 0.4, 0.0), (0.8, 1.0, 0.6, 0.6, 1.0)],
    )
    def test_lif(self, u, o, i, expected_u, expected_o):
        s = lif_update(NeuronState([u], [o]), [i], LifParams(beta=0.5, u_th=0.5))
        assert s.u[0] == pytest.approx(expected_u) and s.o[0] == expected_o

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            qif_update(NeuronState.zeros(3), np.zeros(2), DEFAULT)
        with pytest.raises(ShapeMismatch):
            lif_update(NeuronState.zeros(3), np.zeros(4), LifParams())

    def test_state_rejects_non_binary_spikes(self):
        with pytest.raises(InvalidParams):
            NeuronState([0.0], [0.5])

    def test_non_finite(self):
        with pytest.raises(NonFiniteValue):
            qif_update(NeuronState([1e200], [0.0]), [0.0], DEFAULT)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(-5, 5))
    def test_reset_independent_of_potential(self, us, i):
        n = len(us)
        spiked = NeuronState(np.array(us), np.ones(n))
        other = NeuronState(np.zeros(n), np.ones(n))
        for update, p in ((qif_update, DEFAULT), (lif_update, LifParams())):
            a = update(spiked, np.full(n, i), p)
            b = update(other, np.full(n, i), p)
            np.testing.assert_array_equal(a.u, b.u)
            np.testing.assert_array_equal(a.u, np.full(n, p.u_reset + i))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_heaviside_binary(self, xs):
        h = heaviside(np.array(xs))
        assert set(np.unique(h)) <= {0.0, 1.0}
        assert math.isclose(heaviside(0.0), 1.0)
