"""
Time-domain closed-loop simulation of the repetitive control system.
The period delay is a ring buffer; the q_p loop reads it at tau_d - tau_q and the
b_p path taps it at tau_d - tau_q - tau_b, so the filter advances stay causal.
All continuous blocks share one fixed-step RK4 integrator.
"""

import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

from errors import ImproperTransferFunction, InvalidParameter, TraceTooShort, UnstableSimulation
from freqresp import TransferFunction, chain_tf

DEFAULT_STEPS_PER_PERIOD = 5000
LAG_TOL = 1e-12
DIVERGENCE_FACTOR = 1e6
MAX_ALIGN_TRIES = 10000


@dataclass
class StateSpaceBlock:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state: np.ndarray = None

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape != (n, 1) or self.C.shape != (1, n) or self.D.shape != (1, 1):
            raise InvalidParameter("inconsistent state-space dimensions")
        if self.state is None:
            self.state = np.zeros(n)

    @property
    def order(self):
        return self.A.shape[0]

    def frequency_response(self, omega):
        """C (jωI - A)^{-1} B + D"""
        if self.order == 0:
            return complex(self.D[0, 0])
        x = np.linalg.solve(1j * omega * np.eye(self.order) - self.A, self.B)
        return complex((self.C @ x + self.D)[0, 0])

    def balanced(self):
        """Diagonally rescaled copy with the same transfer function"""
        if self.order == 0:
            return StateSpaceBlock(self.A, self.B, self.C, self.D)
        A, T = linalg.matrix_balance(self.A, permute=False)
        return StateSpaceBlock(A, np.linalg.solve(T, self.B), self.C @ T, self.D.copy())


def realize(system):
    """
    Controllable-canonical realization of a proper transfer function.

    Args:
        system: TransferFunction or a sequence of BiquadSection

    Returns:
        StateSpaceBlock

    Raises:
        ImproperTransferFunction: numerator degree above denominator degree,
        or a negative (advance) delay
    """
    tf = system if isinstance(system, TransferFunction) else chain_tf(system)
    if not tf.is_proper:
        raise ImproperTransferFunction(
            f"numerator degree {len(tf.num) - 1} exceeds denominator degree {tf.order}"
        )
    if tf.delay < 0:
        raise ImproperTransferFunction("pure advances must be absorbed into delay taps")
    if tf.order == 0:
        return StateSpaceBlock(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                               np.array([[tf.num[0] / tf.den[0]]]))
    A, B, C, D = signal.tf2ss(tf.num[::-1], tf.den[::-1])
    return StateSpaceBlock(np.atleast_2d(A), B.reshape(-1, 1), C.reshape(1, -1), D.reshape(1, 1))


class DelayLine:
    """Ring buffer of past samples read at integer lags"""

    def __init__(self, length_seconds, dt):
        self.length_seconds = length_seconds
        self.dt = dt
        self.buffer = np.zeros(int(math.ceil(length_seconds / dt - LAG_TOL)) + 1)
        self.write_head = 0

    def push(self, x):
        self.write_head = (self.write_head + 1) % len(self.buffer)
        self.buffer[self.write_head] = x
        return self

    def tap(self, lag):
        """Sample written lag pushes ago; zero before the buffer has filled"""
        if not 0 <= lag < len(self.buffer):
            raise InvalidParameter(f"tap lag {lag} outside delay line of {len(self.buffer) - 1} samples")
        return self.buffer[(self.write_head - lag) % len(self.buffer)]

    def lag_samples(self, seconds):
        """Integer sample count of a lag; rejects lags that are not multiples of dt"""
        n = seconds / self.dt
        if abs(n - round(n)) > LAG_TOL * max(1.0, n) or not 0 <= round(n) < len(self.buffer):
            raise InvalidParameter(f"lag {seconds} s is not a whole number of {self.dt} s steps")
        return int(round(n))


def triangular_wave(amplitude, period, t):
    """
    Odd-symmetric triangle: 0 at t=0, +amplitude at period/4, -amplitude at 3·period/4.
    Works on arrays.
    """
    if not period > 0:
        raise InvalidParameter("period must be positive")
    phase = np.mod(np.asarray(t, dtype=float) / period, 1.0)
    value = amplitude * np.where(
        phase < 0.25, 4.0 * phase,
        np.where(phase < 0.75, 2.0 - 4.0 * phase, 4.0 * phase - 4.0),
    )
    return value if np.ndim(value) else float(value)


def sinusoid(amplitude, omega, t):
    value = amplitude * np.sin(omega * np.asarray(t, dtype=float))
    return value if np.ndim(value) else float(value)


def _lags(ctrl, plant):
    lags = [ctrl.tau_d - ctrl.tau_q, ctrl.tau_d - ctrl.tau_q - ctrl.tau_b]
    if plant.delay > 0:
        lags.append(plant.delay)
    return lags


def aligned_step(lags, dt=None, tau_d=None):
    """
    Largest step not above dt that makes every lag a whole number of steps.

    The first lag fixes the candidate steps lag/n; n grows until the others align.
    """
    primary = lags[0]
    if dt is None:
        dt = tau_d / DEFAULT_STEPS_PER_PERIOD
    if not dt > 0:
        raise InvalidParameter("time step must be positive")
    n = max(1, int(math.ceil(primary / dt - LAG_TOL)))
    for _ in range(MAX_ALIGN_TRIES):
        step = primary / n
        if all(abs(lag / step - round(lag / step)) <= LAG_TOL * max(1.0, lag / step) for lag in lags):
            return step
        n += 1
    raise InvalidParameter(f"delays {lags} admit no common step at or below {dt}")


@dataclass
class SimulationTrace:
    dt: float
    t: np.ndarray
    reference: np.ndarray
    output: np.ndarray
    error: np.ndarray
    control: np.ndarray
    lags: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def to_csv(self, config_hash=""):
        """CSV bytes with 17 significant digits"""
        buf = io.StringIO()
        data = np.column_stack((self.t, self.reference, self.output, self.error, self.control))
        np.savetxt(buf, data, fmt="%.17g", delimiter=",",
                   header=f"t,reference,output,error,control\nconfig_hash={config_hash}", comments="# ")
        return buf.getvalue().encode("utf-8")


class ClosedLoop:
    """
    Linear closed loop of plant, q_p and b_p blocks driven by the reference
    and three delayed signals v = [r, q-loop tap, b tap, delayed plant input].
    """

    def __init__(self, plant, ctrl):
        self.plant_delay = plant.delay
        blocks = [realize(ctrl.qp_sections).balanced(),
                  realize(ctrl.bp_sections).balanced(),
                  realize(TransferFunction(plant.num, plant.den)).balanced()]
        q, b, p = blocks
        nq, nb, npl = q.order, b.order, p.order
        n = nq + nb + npl
        width = n + 4
        sq, sb, sp = slice(0, nq), slice(nq, nq + nb), slice(nq + nb, n)
        R, D1, D2, UD = n, n + 1, n + 2, n + 3

        def row(state_slice=None, C=None, external=None, weight=1.0):
            r = np.zeros(width)
            if state_slice is not None:
                r[state_slice] = C.ravel()
            if external is not None:
                r[external] = weight
            return r

        b_out = row(sb, b.C) + row(external=D2, weight=b.D[0, 0])
        dp = p.D[0, 0]
        if self.plant_delay > 0:
            y = row(sp, p.C) + row(external=UD, weight=dp)
        else:
            # y appears on both sides through e = r - y
            y = (row(sp, p.C) + dp * (row(external=R) + b_out)) / (1.0 + dp)
        e = row(external=R) - y
        u = e + b_out
        q_in = e + row(external=D1)
        w = row(sq, q.C) + q.D[0, 0] * q_in
        plant_in = row(external=UD) if self.plant_delay > 0 else u

        M = np.zeros((n, width))
        M[sq, sq] = q.A
        M[sq] += q.B @ q_in[None, :]
        M[sb, sb] = b.A
        M[sb] += b.B @ row(external=D2)[None, :]
        M[sp, sp] = p.A
        M[sp] += p.B @ plant_in[None, :]

        self.n = n
        self.A = M[:, :n]
        self.B = M[:, n:]
        self.outputs = np.vstack((y, e, u, w))

    def derivative(self, x, v):
        return self.A @ x + self.B @ v

    def rk4_step(self, x, v0, vh, v1, h):
        k1 = self.derivative(x, v0)
        k2 = self.derivative(x + 0.5 * h * k1, vh)
        k3 = self.derivative(x + 0.5 * h * k2, vh)
        k4 = self.derivative(x + h * k3, v1)
        return x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0

    def signals(self, x, v):
        """(y, e, u, w) at one instant"""
        return self.outputs @ np.concatenate((x, v))


def simulate(plant, ctrl, reference, duration, dt=None, logger=None):
    """
    Fixed-step closed-loop simulation from zero initial state.

    Args:
        plant (TransferFunction): Plant, input delay allowed
        ctrl (RepetitiveController): Repetitive controller
        reference: Callable t -> r(t) accepting numpy arrays
        duration (float): Simulated time, at least 2·tau_d
        dt (float, optional): Requested step; rounded down so every delay
            is a whole number of steps (default tau_d/5000)
        logger (logging.Logger, optional): Logger instance

    Returns:
        SimulationTrace

    Raises:
        UnstableSimulation: |y| beyond 1e6 times the reference amplitude
    """
    logger = logger or logging.getLogger(__name__)
    if duration < 2.0 * ctrl.tau_d * (1.0 - LAG_TOL):
        raise InvalidParameter(f"duration {duration} is shorter than two periods")
    if plant.delay < 0:
        raise ImproperTransferFunction("plant advance cannot be simulated")

    lags = _lags(ctrl, plant)
    h = aligned_step(lags, dt, ctrl.tau_d)
    loop = ClosedLoop(plant, ctrl)
    period_line = DelayLine(lags[0], h)
    lag_q = period_line.lag_samples(lags[0])
    lag_b = period_line.lag_samples(lags[1])
    plant_line = DelayLine(plant.delay, h) if plant.delay > 0 else None
    lag_p = plant_line.lag_samples(plant.delay) if plant_line else 0
    logger.debug(f"dt={h:.6g} s, lags q={lag_q} b={lag_b} plant={lag_p} samples")

    steps = int(round(duration / h))
    t = np.arange(steps + 1) * h
    r = np.asarray(reference(t), dtype=float)
    r_half = np.asarray(reference(t[:-1] + 0.5 * h), dtype=float)
    amplitude = float(np.max(np.abs(r))) if r.size else 0.0
    bound = DIVERGENCE_FACTOR * amplitude

    y = np.zeros(steps + 1)
    e = np.zeros(steps + 1)
    u = np.zeros(steps + 1)

    def delayed(line, lag, ahead):
        # Sample at index k + ahead - lag, where the newest pushed sample is k.
        if line is None or lag == 0:
            return 0.0
        return line.tap(lag - ahead)

    x = np.zeros(loop.n)
    v = np.array([r[0], 0.0, 0.0, 0.0])
    y[0], e[0], u[0], w = loop.signals(x, v)
    period_line.push(w)
    if plant_line:
        plant_line.push(u[0])

    for k in range(steps):
        v1 = np.array([
            r[k + 1],
            delayed(period_line, lag_q, 1),
            delayed(period_line, lag_b, 1),
            delayed(plant_line, lag_p, 1),
        ])
        vh = np.array([r_half[k], 0.5 * (v[1] + v1[1]), 0.5 * (v[2] + v1[2]), 0.5 * (v[3] + v1[3])])
        x = loop.rk4_step(x, v, vh, v1, h)
        v = v1
        y[k + 1], e[k + 1], u[k + 1], w = loop.signals(x, v)
        period_line.push(w)
        if plant_line:
            plant_line.push(u[k + 1])
        if bound > 0 and not abs(y[k + 1]) <= bound:
            n = k + 2
            trace = SimulationTrace(h, t[:n], r[:n], y[:n], e[:n], u[:n])
            raise UnstableSimulation(
                f"output {y[k + 1]:.3g} exceeded {DIVERGENCE_FACTOR:g} x amplitude at t={t[k + 1]:.6g} s",
                trace,
            )

    logger.info(f"Simulated {steps} steps of {h:.6g} s")
    return SimulationTrace(h, t, r, y, e, u, {"q": lag_q, "b": lag_b, "plant": lag_p})


@dataclass(frozen=True)
class PeriodMetric:
    index: int
    rms_error: float
    peak_error: float


def per_period_error_metrics(trace, period):
    """
    RMS and peak |error| over every complete period window.

    Raises:
        TraceTooShort: fewer than two complete periods
    """
    samples = int(round(period / trace.dt))
    if samples < 1:
        raise InvalidParameter("period shorter than one time step")
    count = (len(trace.error) - 1) // samples
    if count < 2:
        raise TraceTooShort(f"trace holds {count} complete periods, need at least 2")
    windows = np.asarray(trace.error[:count * samples]).reshape(count, samples)
    rms = np.sqrt(np.mean(windows ** 2, axis=1))
    peak = np.max(np.abs(windows), axis=1)
    return [PeriodMetric(i, float(rms[i]), float(peak[i])) for i in range(count)]


def metrics_to_json(metrics, config_hash="", extra=None):
    doc = {
        "config_hash": config_hash,
        "periods": [
            {"index": m.index, "rms_error": m.rms_error, "peak_error": m.peak_error} for m in metrics
        ],
    }
    doc.update(extra or {})
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def steady_state_gain(trace, omega, settle_fraction=0.5):
    """
    Output/reference amplitude ratio at omega from a least-squares sine fit.

    The fit spans whole cycles at the end of the trace, after settle_fraction
    of the run has been discarded.
    """
    cycle = 2.0 * math.pi / omega
    span = trace.t[-1] * (1.0 - settle_fraction)
    cycles = int(span // cycle)
    if cycles < 1:
        raise TraceTooShort("trace too short for a steady-state fit")
    n = int(round(cycles * cycle / trace.dt))
    t = trace.t[-n:]
    basis = np.column_stack((np.sin(omega * t), np.cos(omega * t), np.ones_like(t)))

    def amplitude(values):
        coef = np.linalg.lstsq(basis, values[-n:], rcond=None)[0]
        return math.hypot(coef[0], coef[1])

    return amplitude(trace.output) / amplitude(trace.reference)
