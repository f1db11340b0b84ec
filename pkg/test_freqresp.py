import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import InvalidParameter, MissingParameter, NonFiniteInput, PoleAtFrequency, UnknownKind
from freqresp import (
    BiquadSection,
    TransferFunction,
    bode_grid,
    chain_response,
    chain_tf,
    eval_tf,
    horner,
    make_controller_tf,
)

LAG = TransferFunction((1.0,), (1.0, 1.0))
INTEGRATOR = TransferFunction((1.0,), (0.0, 1.0))

coefficient = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
positive = st.floats(min_value=0.1, max_value=10.0)
frequency = st.floats(min_value=0.01, max_value=100.0)


def afm_plant():
    return TransferFunction.from_resonant_modes(
        1.0e12, [(41.6e3, 0.016)], [(40.9e3, 0.016), (120e3, 0.17)]
    )


class TestTransferFunction:
    def test_zero_denominator_rejected(self):
        with pytest.raises(InvalidParameter):
            TransferFunction((1.0,), (0.0, 0.0))

    def test_non_finite_coefficients_rejected(self):
        with pytest.raises(NonFiniteInput):
            TransferFunction((math.nan,), (1.0,))

    def test_trailing_zeros_dropped(self):
        tf = TransferFunction((1.0, 0.0), (1.0, 1.0, 0.0))
        assert tf.num == (1.0,)
        assert tf.den == (1.0, 1.0)
        assert tf.order == 1
        assert tf.is_proper

    def test_resonant_form_expands_to_fourth_order(self):
        plant = afm_plant()
        assert len(plant.num) == 3
        assert len(plant.den) == 5
        assert plant.den[-1] == pytest.approx(1.0)

    @given(st.lists(coefficient, min_size=1, max_size=4), st.lists(positive, min_size=1, max_size=3),
           st.lists(coefficient, min_size=1, max_size=4), st.lists(positive, min_size=1, max_size=3),
           frequency)
    def test_product_response_is_product_of_responses(self, n1, poles1, n2, poles2, omega):
        def stable(poles):
            return tuple(np.polynomial.polynomial.polyfromroots([-p for p in poles]))

        a = TransferFunction(n1, stable(poles1), delay=0.1)
        b = TransferFunction(n2, stable(poles2))
        expected = eval_tf(a, omega) * eval_tf(b, omega)
        assert eval_tf(a * b, omega) == pytest.approx(expected, rel=1e-8, abs=1e-12)


class TestEvalTf:
    def test_unity_lag_dc(self):
        assert eval_tf(LAG, 0.0) == 1 + 0j

    def test_unity_lag_at_one(self):
        assert eval_tf(LAG, 1.0) == pytest.approx(0.5 - 0.5j, rel=1e-15)

    def test_afm_dc_gain(self):
        dc = eval_tf(afm_plant(), 0.0)
        expected = 41.6e3 ** 2 / ((2 * math.pi) ** 2 * 40.9e3 ** 2 * 120e3 ** 2) * 1e12
        assert dc.real == pytest.approx(expected, rel=1e-12)
        assert dc.real == pytest.approx(1.82, abs=0.005)
        assert dc.imag == 0.0

    def test_pole_at_frequency(self):
        with pytest.raises(PoleAtFrequency) as info:
            eval_tf(INTEGRATOR, 0.0)
        assert info.value.omega == 0.0

    @pytest.mark.parametrize("omega", [math.nan, math.inf, -math.inf])
    def test_non_finite_omega(self, omega):
        with pytest.raises(NonFiniteInput):
            eval_tf(LAG, omega)

    def test_delay_rotates_phase(self):
        tf = TransferFunction((1.0,), (1.0,), delay=0.5)
        assert eval_tf(tf, math.pi) == pytest.approx(cmath.exp(-0.5j * math.pi), abs=1e-15)

    @given(st.lists(coefficient, min_size=1, max_size=5), st.lists(coefficient, min_size=1, max_size=5),
           frequency)
    def test_conjugate_symmetry(self, num, den, omega):
        den = den + [1.0]
        tf = TransferFunction(num, den)
        try:
            value = eval_tf(tf, omega)
        except PoleAtFrequency:
            return
        reflected = horner(tf.num, -1j * omega) / horner(tf.den, -1j * omega)
        assert value == pytest.approx(reflected.conjugate(), rel=1e-12, abs=1e-15)


class TestBodeGrid:
    def test_constant_is_flat(self):
        points = bode_grid(TransferFunction.constant(1.0), [1.0, 2.0, 5.0])
        assert [p.magnitude for p in points] == [1.0, 1.0, 1.0]
        assert [p.phase for p in points] == [0.0, 0.0, 0.0]

    def test_integrator(self):
        points = bode_grid(INTEGRATOR, [1.0, 10.0])
        assert [p.magnitude for p in points] == pytest.approx([1.0, 0.1])
        assert [p.phase for p in points] == pytest.approx([-math.pi / 2, -math.pi / 2])

    def test_phase_is_unwrapped(self):
        tf = TransferFunction((1.0,), (1.0,), delay=1.0)
        points = bode_grid(tf, np.linspace(0.5, 20.0, 200))
        phases = np.array([p.phase for p in points])
        assert np.all(np.diff(phases) < 0)
        assert phases[-1] == pytest.approx(-20.0)

    @pytest.mark.parametrize("grid", [[], [2.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
    def test_grid_must_be_positive_and_increasing(self, grid):
        with pytest.raises(InvalidParameter):
            bode_grid(LAG, grid)

    def test_pole_on_grid_propagates(self):
        with pytest.raises(PoleAtFrequency) as info:
            bode_grid(TransferFunction((1.0,), (1.0, 0.0, 1.0)), [0.5, 1.0, 2.0])
        assert info.value.omega == 1.0

    def test_afm_resonance_peaks(self):
        freqs = np.linspace(1e3, 200e3, 4000)
        points = bode_grid(afm_plant(), 2 * math.pi * freqs)
        mag = np.array([p.magnitude for p in points])
        peaks = freqs[1:-1][(mag[1:-1] > mag[:-2]) & (mag[1:-1] > mag[2:])]
        assert len(peaks) == 2
        assert peaks[0] == pytest.approx(40.9e3, rel=0.01)
        # The damped second mode peaks slightly below its natural frequency.
        assert peaks[1] == pytest.approx(120e3, rel=0.05)


class TestControllerTable:
    def test_p(self):
        section = make_controller_tf("P", K=3)
        assert (section.n2, section.n1, section.n0) == (0, 0, 3)
        assert (section.d2, section.d1, section.d0) == (0, 0, 1)

    def test_pid(self):
        section = make_controller_tf("PID", K=2, T_d=0.5, T_i=4)
        assert (section.n2, section.n1, section.n0) == (1, 2, 8)
        assert (section.d2, section.d1, section.d0) == (0, 1, 0)

    def test_second_order_filter(self):
        section = make_controller_tf("SecondOrderFilter", K=1, zeta=0.7, omega=10)
        assert (section.n2, section.n1, section.n0) == (0, 0, 100)
        assert (section.d2, section.d1, section.d0) == pytest.approx((1, 14, 100))

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            make_controller_tf("Bang", K=1)

    def test_missing_parameter(self):
        with pytest.raises(MissingParameter, match="T_i"):
            make_controller_tf("PI", K=1)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_lead_alpha_range(self, alpha):
        with pytest.raises(InvalidParameter):
            make_controller_tf("Lead", K=1, T=1, alpha=alpha)

    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_lag_beta_range(self, beta):
        with pytest.raises(InvalidParameter):
            make_controller_tf("Lag", K=1, T=1, beta=beta)

    @given(positive, positive, positive, st.floats(min_value=0.05, max_value=0.95),
           st.floats(min_value=1.05, max_value=20.0), frequency)
    def test_sections_match_closed_forms(self, K, T, T2, alpha, beta, omega):
        s = 1j * omega
        closed = {
            ("P", ()): K,
            ("PD", (("T_d", T),)): K * (1 + T * s),
            ("PI", (("T_i", T),)): K * (s + T) / s,
            ("PID", (("T_d", T), ("T_i", T2))): K * (T * s + 1 + T2 / s),
            ("Lead", (("T", T), ("alpha", alpha))): K * (T * s + 1) / (alpha * T * s + 1),
            ("Lag", (("T", T), ("beta", beta))): K * (T * s + 1) / (beta * T * s + 1),
            ("FirstOrderFilter", (("tau", T),)): K / (T * s + 1),
            ("SecondOrderFilter", (("zeta", alpha), ("omega", T2))):
                K * T2 ** 2 / (s ** 2 + 2 * alpha * T2 * s + T2 ** 2),
        }
        for (kind, params), expected in closed.items():
            section = make_controller_tf(kind, K=K, **dict(params))
            assert section.response(omega) == pytest.approx(expected, rel=1e-12), kind


class TestBiquadChain:
    def test_empty_chain_is_unity(self):
        assert chain_response((), 3.0) == 1.0

    def test_denominator_must_not_vanish(self):
        with pytest.raises(InvalidParameter):
            BiquadSection(n0=1.0, d0=0.0)

    def test_chain_tf_matches_chain_response(self):
        sections = (make_controller_tf("Lead", K=2, T=0.1, alpha=0.2),
                    make_controller_tf("SecondOrderFilter", K=1, zeta=0.3, omega=5))
        tf = chain_tf(sections)
        for omega in (0.1, 1.0, 7.0):
            assert eval_tf(tf, omega) == pytest.approx(chain_response(sections, omega), rel=1e-12)

    def test_replace_keeps_other_slots(self):
        section = BiquadSection(n0=1.0, d2=1.0, d1=2.0, d0=3.0).replace(d1=5.0)
        assert section.coefficients() == {"n2": 0.0, "n1": 0.0, "n0": 1.0, "d2": 1.0, "d1": 5.0, "d0": 3.0}
