"""
Frequency response of rational transfer functions with pure input delay.
Holds the TransferFunction and BiquadSection types, Bode grids and the
controller coefficient table used to build biquad sections.
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import (
    InvalidParameter,
    MissingParameter,
    NonFiniteInput,
    PoleAtFrequency,
    UnknownKind,
)

POLE_FLOOR = 1e-300


def _strip(coeffs):
    """Drop trailing (highest-power) zeros, keeping at least one coefficient"""
    coeffs = tuple(float(c) for c in coeffs)
    end = len(coeffs)
    while end > 1 and coeffs[end - 1] == 0.0:
        end -= 1
    return coeffs[:end] or (0.0,)


def horner(coeffs, s):
    """
    Evaluate an ascending-power polynomial at s.

    Args:
        coeffs: Coefficients c0, c1, ... (c0 is the constant term)
        s: Complex scalar or numpy array

    Returns:
        Polynomial value with the shape of s
    """
    acc = 0.0 * s
    for c in reversed(coeffs):
        acc = acc * s + c
    return acc


@dataclass(frozen=True)
class TransferFunction:
    """num(s)/den(s)·e^{-delay·s}, coefficients in ascending powers of s"""

    num: tuple
    den: tuple
    delay: float = 0.0

    def __post_init__(self):
        num = _strip(self.num)
        den = _strip(self.den)
        if not any(den):
            raise InvalidParameter("transfer function denominator is identically zero")
        if not all(math.isfinite(c) for c in num + den) or not math.isfinite(self.delay):
            raise NonFiniteInput("transfer function coefficients and delay must be finite")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "delay", float(self.delay))

    @classmethod
    def constant(cls, gain):
        return cls((gain,), (1.0,))

    @classmethod
    def from_resonant_modes(cls, gain, zeros, poles, delay=0.0):
        """
        Build K·Π(s²+2ζω s+ω²) / Π(s²+2ζω s+ω²) from (freq_hz, zeta) modes.

        Args:
            gain (float): Lumped gain K
            zeros: Sequence of (freq_hz, zeta) numerator modes
            poles: Sequence of (freq_hz, zeta) denominator modes
            delay (float): Input delay in seconds

        Returns:
            TransferFunction: Expanded polynomial form
        """
        def expand(modes):
            poly = np.array([1.0])
            for freq_hz, zeta in modes:
                w = 2.0 * math.pi * freq_hz
                poly = np.polynomial.polynomial.polymul(poly, [w * w, 2.0 * zeta * w, 1.0])
            return poly

        num = gain * expand(zeros)
        return cls(tuple(num), tuple(expand(poles)), delay)

    @property
    def order(self):
        return len(self.den) - 1

    @property
    def is_proper(self):
        return len(self.num) <= len(self.den)

    def __mul__(self, other):
        if not isinstance(other, TransferFunction):
            return NotImplemented
        mul = np.polynomial.polynomial.polymul
        return TransferFunction(
            tuple(mul(self.num, other.num)),
            tuple(mul(self.den, other.den)),
            self.delay + other.delay,
        )

    def response(self, omegas):
        """Vectorized response over an array of frequencies; no pole checks"""
        omegas = np.asarray(omegas, dtype=float)
        s = 1j * omegas
        return horner(self.num, s) / horner(self.den, s) * np.exp(-s * self.delay)


@dataclass(frozen=True)
class BiquadSection:
    """(n2 s² + n1 s + n0) / (d2 s² + d1 s + d0); one factor of q_p or b_p"""

    n2: float = 0.0
    n1: float = 0.0
    n0: float = 0.0
    d2: float = 0.0
    d1: float = 0.0
    d0: float = 1.0

    SLOTS = ("n2", "n1", "n0", "d2", "d1", "d0")

    def __post_init__(self):
        if self.d2 == 0 and self.d1 == 0 and self.d0 == 0:
            raise InvalidParameter("biquad denominator is identically zero")

    def coefficients(self):
        return {slot: getattr(self, slot) for slot in self.SLOTS}

    def replace(self, **values):
        coeffs = self.coefficients()
        coeffs.update(values)
        return BiquadSection(**coeffs)

    def response(self, omega):
        return section_response(self.coefficients(), omega)

    def as_tf(self):
        return TransferFunction((self.n0, self.n1, self.n2), (self.d0, self.d1, self.d2))


def section_response(coeffs, omega):
    """
    Response of a biquad whose coefficients may be numpy arrays.

    The parameter-plane rasters evaluate thousands of candidate sections at
    once by passing coefficient arrays here.
    """
    w2 = omega * omega
    num = (coeffs["n0"] - coeffs["n2"] * w2) + 1j * (coeffs["n1"] * omega)
    den = (coeffs["d0"] - coeffs["d2"] * w2) + 1j * (coeffs["d1"] * omega)
    return num / den


def chain_response(sections, omega):
    """Product of section responses; an empty chain is unity"""
    value = 1.0 + 0j
    for section in sections:
        value = value * section.response(omega)
    return value


def chain_tf(sections):
    """Multiply a biquad chain out into one TransferFunction"""
    tf = TransferFunction.constant(1.0)
    for section in sections:
        tf = tf * section.as_tf()
    return tf


def eval_tf(tf, omega):
    """
    Evaluate tf at s = jω.

    Args:
        tf (TransferFunction): Transfer function
        omega (float): Frequency in rad/s

    Returns:
        complex: num(jω)/den(jω)·e^{-jω·delay}

    Raises:
        NonFiniteInput: omega is NaN or infinite
        PoleAtFrequency: |den(jω)| below 1e-300
    """
    omega = float(omega)
    if not math.isfinite(omega):
        raise NonFiniteInput(f"omega must be finite, got {omega!r}")
    s = 1j * omega
    den = horner(tf.den, s)
    if abs(den) < POLE_FLOOR:
        raise PoleAtFrequency(omega)
    value = horner(tf.num, s) / den
    if tf.delay:
        value *= complex(math.cos(omega * tf.delay), -math.sin(omega * tf.delay))
    return complex(value)


@dataclass(frozen=True)
class BodePoint:
    omega: float
    value: complex
    magnitude: float
    phase: float


def bode_grid(tf, omegas):
    """
    Bode data over a strictly increasing positive grid, phase unwrapped.

    Args:
        tf (TransferFunction): Transfer function
        omegas: Frequencies in rad/s

    Returns:
        list[BodePoint]: One point per frequency
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or omegas.size == 0:
        raise InvalidParameter("bode grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(omegas)):
        raise NonFiniteInput("bode grid contains non-finite frequencies")
    if omegas[0] <= 0 or np.any(np.diff(omegas) <= 0):
        raise InvalidParameter("bode grid must be positive and strictly increasing")

    values = [eval_tf(tf, w) for w in omegas]
    phases = np.unwrap(np.angle(values))
    return [
        BodePoint(float(w), v, abs(v), float(p))
        for w, v, p in zip(omegas, values, phases)
    ]


# Controller coefficient table: kind -> (required params, builder returning
# (n2, n1, n0, d2, d1, d0)).
CONTROLLER_TABLE = {
    "P": (("K",), lambda p: (0.0, 0.0, p["K"], 0.0, 0.0, 1.0)),
    "PD": (("K", "T_d"), lambda p: (0.0, p["K"] * p["T_d"], p["K"], 0.0, 0.0, 1.0)),
    "PI": (("K", "T_i"), lambda p: (0.0, p["K"], p["K"] * p["T_i"], 0.0, 1.0, 0.0)),
    "PID": (("K", "T_d", "T_i"),
            lambda p: (p["K"] * p["T_d"], p["K"], p["K"] * p["T_i"], 0.0, 1.0, 0.0)),
    "Lag": (("K", "T", "beta"),
            lambda p: (0.0, p["K"] * p["T"], p["K"], 0.0, p["beta"] * p["T"], 1.0)),
    "Lead": (("K", "T", "alpha"),
             lambda p: (0.0, p["K"] * p["T"], p["K"], 0.0, p["alpha"] * p["T"], 1.0)),
    "FirstOrderFilter": (("K", "tau"), lambda p: (0.0, 0.0, p["K"], 0.0, p["tau"], 1.0)),
    "SecondOrderFilter": (("K", "zeta", "omega"),
                          lambda p: (0.0, 0.0, p["K"] * p["omega"] ** 2,
                                     1.0, 2.0 * p["zeta"] * p["omega"], p["omega"] ** 2)),
}


def make_controller_tf(kind, **params):
    """
    Build the biquad section of a standard controller kind.

    Args:
        kind (str): One of P, PD, PI, PID, Lag, Lead, FirstOrderFilter, SecondOrderFilter
        **params: K, T_d, T_i, T, alpha, beta, tau, zeta, omega as the kind requires

    Returns:
        BiquadSection: Coefficients exactly as the table row

    Raises:
        UnknownKind, MissingParameter, InvalidParameter
    """
    if kind not in CONTROLLER_TABLE:
        raise UnknownKind(f"unknown controller kind {kind!r}; expected one of {sorted(CONTROLLER_TABLE)}")
    required, build = CONTROLLER_TABLE[kind]
    missing = [name for name in required if name not in params]
    if missing:
        raise MissingParameter(f"{kind} requires {', '.join(missing)}")
    values = {name: float(params[name]) for name in required}
    if not all(math.isfinite(v) for v in values.values()):
        raise NonFiniteInput(f"{kind} parameters must be finite")
    if kind == "Lead" and not 0.0 < values["alpha"] < 1.0:
        raise InvalidParameter(f"Lead requires 0 < alpha < 1, got {values['alpha']}")
    if kind == "Lag" and not values["beta"] > 1.0:
        raise InvalidParameter(f"Lag requires beta > 1, got {values['beta']}")
    return BiquadSection(*build(values))
