import json
import math

import numpy as np
import pytest

from errors import ImproperTransferFunction, InvalidParameter, TraceTooShort, UnstableSimulation
from freqresp import BiquadSection, TransferFunction, eval_tf, make_controller_tf
from regions import pick_point
from repcon import RepetitiveController, comp_sensitivity
from sim import (
    DelayLine,
    SimulationTrace,
    aligned_step,
    metrics_to_json,
    per_period_error_metrics,
    realize,
    simulate,
    sinusoid,
    steady_state_gain,
    triangular_wave,
)

LAG = TransferFunction((1.0,), (1.0, 1.0))


def constant_error_trace(c, samples=21, dt=0.1):
    t = np.arange(samples) * dt
    zeros = np.zeros(samples)
    return SimulationTrace(dt, t, zeros + c, zeros, zeros + c, zeros)


class TestRealize:
    def test_first_order_lag(self):
        block = realize(LAG)
        assert block.A.tolist() == [[-1.0]]
        assert block.B.tolist() == [[1.0]]
        assert block.C.tolist() == [[1.0]]
        assert block.D.tolist() == [[0.0]]

    def test_constant_has_no_state(self):
        block = realize(TransferFunction.constant(3.0))
        assert block.order == 0
        assert block.D.tolist() == [[3.0]]
        assert block.frequency_response(5.0) == 3.0

    def test_biquad_chain(self):
        sections = (make_controller_tf("Lead", K=2, T=0.1, alpha=0.2),
                    make_controller_tf("SecondOrderFilter", K=1, zeta=0.3, omega=5))
        block = realize(sections)
        assert block.order == 3
        for omega in (0.3, 3.0, 30.0):
            expected = sections[0].response(omega) * sections[1].response(omega)
            assert block.frequency_response(omega) == pytest.approx(expected, rel=1e-8)

    def test_empty_chain_is_unity(self):
        block = realize(())
        assert block.order == 0
        assert block.D.tolist() == [[1.0]]

    def test_improper_rejected(self):
        with pytest.raises(ImproperTransferFunction):
            realize(TransferFunction((0.0, 0.0, 1.0), (1.0, 1.0)))

    def test_negative_delay_rejected(self):
        with pytest.raises(ImproperTransferFunction):
            realize(TransferFunction((1.0,), (1.0, 1.0), delay=-1e-3))

    def test_fidelity_at_random_frequencies(self):
        tf = TransferFunction((2.0, 0.5, 0.1), (6.0, 11.0, 6.0, 1.0))
        block = realize(tf).balanced()
        rng = np.random.default_rng(1)
        for omega in rng.uniform(0.0, 500.0, 200):
            expected = eval_tf(tf, omega)
            assert abs(block.frequency_response(omega) - expected) <= 1e-8 * abs(expected)

    def test_afm_plant(self):
        plant = TransferFunction.from_resonant_modes(1.0e12, [(41.6e3, 0.016)],
                                                     [(40.9e3, 0.016), (120e3, 0.17)])
        block = realize(plant).balanced()
        assert block.order == 4
        assert block.frequency_response(0.0).real == pytest.approx(eval_tf(plant, 0.0).real, rel=1e-6)
        omega = 2 * math.pi * 40.9e3
        assert block.frequency_response(omega) == pytest.approx(eval_tf(plant, omega), rel=1e-6)


class TestSignals:
    @pytest.mark.parametrize("amplitude, period, t, expected", [
        (1.0, 1.0, 0.0, 0.0),
        (1.0, 1.0, 0.25, 1.0),
        (1.0, 1.0, 0.5, 0.0),
        (2.0, 0.0005, 0.000375, -2.0),
        (1.0, 1.0, 1.25, 1.0),
    ])
    def test_triangular_wave(self, amplitude, period, t, expected):
        assert triangular_wave(amplitude, period, t) == pytest.approx(expected, abs=1e-12)

    def test_triangular_wave_is_odd(self):
        t = np.linspace(0.0, 3.0, 301)
        assert triangular_wave(1.5, 1.0, -t) == pytest.approx(-triangular_wave(1.5, 1.0, t), abs=1e-12)

    def test_triangular_wave_period(self):
        with pytest.raises(InvalidParameter):
            triangular_wave(1.0, 0.0, 0.1)

    def test_sinusoid(self):
        assert sinusoid(2.0, math.pi, 0.5) == pytest.approx(2.0)


class TestDelayLine:
    def test_taps(self):
        line = DelayLine(1.0, 0.25)
        for x in (1.0, 2.0, 3.0, 4.0, 5.0):
            line.push(x)
        assert line.tap(0) == 5.0
        assert line.tap(4) == 1.0
        with pytest.raises(InvalidParameter):
            line.tap(5)

    def test_unfilled_taps_are_zero(self):
        line = DelayLine(1.0, 0.25).push(7.0)
        assert line.tap(3) == 0.0

    def test_lag_samples(self):
        line = DelayLine(1.0, 0.25)
        assert line.lag_samples(0.5) == 2
        with pytest.raises(InvalidParameter):
            line.lag_samples(0.3)

    def test_aligned_step_keeps_every_lag_integral(self):
        assert aligned_step([1.0, 0.3], dt=0.15) == pytest.approx(0.1)

    def test_aligned_step_default(self):
        lags = [0.0005 - 7.5e-6, 0.0005 - 7.5e-6 - 3e-6]
        assert aligned_step(lags, tau_d=0.0005) == pytest.approx(1e-7, rel=1e-9)

    def test_aligned_step_needs_positive_dt(self):
        with pytest.raises(InvalidParameter):
            aligned_step([1.0], dt=0.0)


class TestSimulate:
    def test_zero_reference_gives_zero_trace(self):
        ctrl = RepetitiveController(tau_d=1.0, qp_sections=(BiquadSection(n0=0.5),))
        trace = simulate(LAG, ctrl, np.zeros_like, 2.0, dt=0.01)
        assert len(trace) == 201
        for values in (trace.output, trace.error, trace.control):
            assert not values.any()

    def test_error_is_reference_minus_output(self):
        ctrl = RepetitiveController(tau_d=1.0, qp_sections=(BiquadSection(n0=0.5),))
        trace = simulate(LAG, ctrl, lambda t: triangular_wave(1.0, 1.0, t), 3.0, dt=0.01)
        assert np.allclose(trace.error, trace.reference - trace.output, rtol=0, atol=1e-12)
        assert trace.lags == {"q": 100, "b": 100, "plant": 0}

    def test_duration_floor(self):
        ctrl = RepetitiveController(tau_d=1.0)
        with pytest.raises(InvalidParameter):
            simulate(LAG, ctrl, np.ones_like, 1.5, dt=0.01)

    def test_unstable_plant_aborts_with_partial_trace(self):
        unstable = TransferFunction((1.0,), (-10.0, 1.0))
        ctrl = RepetitiveController(tau_d=1.0).disabled()
        with pytest.raises(UnstableSimulation) as info:
            simulate(unstable, ctrl, np.ones_like, 10.0, dt=0.01)
        trace = info.value.trace
        assert 1 < len(trace) < 1001
        assert abs(trace.output[-1]) > 1e6

    def test_plant_delay_is_a_tap(self):
        delayed = TransferFunction((1.0,), (1.0, 1.0), delay=0.05)
        ctrl = RepetitiveController(tau_d=1.0).disabled()
        trace = simulate(delayed, ctrl, np.ones_like, 2.0, dt=0.01)
        assert trace.lags["plant"] == 5
        assert not trace.output[:5].any()
        assert trace.output[6] > 0

    def test_bit_identical_reruns(self):
        ctrl = RepetitiveController(tau_d=1.0, tau_q=0.1, qp_sections=(BiquadSection(n0=0.5),))
        first = simulate(LAG, ctrl, lambda t: sinusoid(1.0, 3.0, t), 3.0, dt=0.01)
        second = simulate(LAG, ctrl, lambda t: sinusoid(1.0, 3.0, t), 3.0, dt=0.01)
        assert first.to_csv("h") == second.to_csv("h")

    def test_halving_the_step_keeps_the_final_period(self):
        ctrl = RepetitiveController(tau_d=1.0, tau_q=0.1, qp_sections=(BiquadSection(n0=0.5),))

        def final_rms(dt):
            trace = simulate(LAG, ctrl, lambda t: triangular_wave(1.0, 1.0, t), 4.0, dt=dt)
            return per_period_error_metrics(trace, 1.0)[-1].rms_error

        coarse, fine = final_rms(2e-3), final_rms(1e-3)
        assert fine > 0
        assert abs(coarse - fine) < 0.01 * fine

    def test_csv_header(self):
        lines = constant_error_trace(1.0).to_csv("abc").decode("utf-8").splitlines()
        assert lines[:2] == ["# t,reference,output,error,control", "# config_hash=abc"]
        assert len(lines) == 23


class TestMetrics:
    def test_zero_trace(self):
        metrics = per_period_error_metrics(constant_error_trace(0.0), 1.0)
        assert [(m.rms_error, m.peak_error) for m in metrics] == [(0.0, 0.0), (0.0, 0.0)]

    def test_constant_error(self):
        metrics = per_period_error_metrics(constant_error_trace(-0.25, samples=41), 1.0)
        assert [m.index for m in metrics] == [0, 1, 2, 3]
        for m in metrics:
            assert m.rms_error == pytest.approx(0.25)
            assert m.peak_error == 0.25

    def test_too_short(self):
        with pytest.raises(TraceTooShort):
            per_period_error_metrics(constant_error_trace(1.0, samples=15), 1.0)

    def test_json(self):
        metrics = per_period_error_metrics(constant_error_trace(1.0), 1.0)
        doc = json.loads(metrics_to_json(metrics, "abc", {"amplitude": 2.0}))
        assert doc["config_hash"] == "abc"
        assert doc["amplitude"] == 2.0
        assert doc["periods"][1] == {"index": 1, "rms_error": 1.0, "peak_error": 1.0}

    def test_steady_state_gain_of_scaled_output(self):
        t = np.arange(2001) * 0.01
        r = np.sin(2.0 * t)
        trace = SimulationTrace(0.01, t, r, 0.5 * r, 0.5 * r, r)
        assert steady_state_gain(trace, 2.0) == pytest.approx(0.5, rel=1e-9)


@pytest.mark.slow
class TestTimeFrequencyConsistency:
    @pytest.mark.parametrize("enabled", [True, False])
    @pytest.mark.parametrize("omega", [0.5, 1.0, 2.0, 5.0, 10.0])
    def test_sinusoidal_gain_matches_complementary_sensitivity(self, omega, enabled):
        ctrl = RepetitiveController(tau_d=1.0, qp_sections=(BiquadSection(n0=0.5),))
        if not enabled:
            ctrl = ctrl.disabled()
        trace = simulate(LAG, ctrl, lambda t: sinusoid(1.0, omega, t), 40.0, dt=1e-3)
        expected = abs(comp_sensitivity(LAG, ctrl, omega))
        assert steady_state_gain(trace, omega) == pytest.approx(expected, rel=0.02)


@pytest.mark.slow
class TestAfmSimulation:
    @pytest.fixture(scope="class")
    def runs(self, afm_map, afm_focused):
        cfg = afm_focused
        point = pick_point(afm_map.overall, cfg.pick)
        ctrl = cfg.selection.controller_at(cfg.controller, *point)
        tau_d = ctrl.tau_d
        amplitude = cfg.simulation.amplitude

        def reference(t):
            return triangular_wave(amplitude, tau_d, t)

        duration = cfg.simulation.periods * tau_d
        repetitive = simulate(cfg.plant, ctrl, reference, duration)
        baseline = simulate(cfg.plant, ctrl.disabled(), reference, duration)
        return (per_period_error_metrics(repetitive, tau_d),
                per_period_error_metrics(baseline, tau_d))

    def test_peak_error_shrinks(self, runs):
        metrics, _ = runs
        assert len(metrics) == 20
        assert metrics[-1].peak_error < metrics[0].peak_error

    def test_repetitive_action_beats_plain_feedback(self, runs):
        metrics, baseline = runs
        assert metrics[-1].peak_error < 0.1 * baseline[-1].peak_error

    def test_reruns_are_byte_identical(self, afm_map, afm_focused):
        cfg = afm_focused
        ctrl = cfg.selection.controller_at(cfg.controller, *pick_point(afm_map.overall, cfg.pick))

        def reference(t):
            return triangular_wave(cfg.simulation.amplitude, ctrl.tau_d, t)

        first = simulate(cfg.plant, ctrl, reference, 2 * ctrl.tau_d)
        second = simulate(cfg.plant, ctrl, reference, 2 * ctrl.tau_d)
        assert first.to_csv("afm") == second.to_csv("afm")
