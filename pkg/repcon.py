"""
Repetitive-control loop algebra.
Loop gain, sensitivity, complementary sensitivity, regeneration spectrum and the
robust-performance functional of the modified repetitive control structure.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from errors import CriticalPoint, InvalidParameter, RegenerativePole
from freqresp import BiquadSection, chain_response, eval_tf

REL_FLOOR = 1e-14
DEFAULT_EPSILON = 0.05
BANDS = ("NP", "RP", "RS")


def _below_floor(value, scale):
    """Relative floor test; works elementwise on arrays"""
    return np.abs(value) < REL_FLOOR * np.maximum(1.0, np.abs(scale))


@dataclass(frozen=True)
class RepetitiveController:
    """
    q(s) = q_p(s)e^{tau_q s} and b(s) = b_p(s)e^{tau_b s} around a period-tau_d delay.

    q_p and b_p are products of biquad sections; an empty b_p chain is unity.
    """

    tau_d: float
    tau_q: float = 0.0
    tau_b: float = 0.0
    qp_sections: tuple = (BiquadSection(n0=1.0),)
    bp_sections: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "qp_sections", tuple(self.qp_sections))
        object.__setattr__(self, "bp_sections", tuple(self.bp_sections))
        if not self.tau_d > 0:
            raise InvalidParameter(f"tau_d must be positive, got {self.tau_d}")
        if self.tau_q < 0 or self.tau_b < 0:
            raise InvalidParameter("tau_q and tau_b must be non-negative")
        if not self.tau_d > self.tau_q + self.tau_b:
            raise InvalidParameter(
                f"advances cannot be absorbed: tau_q + tau_b = {self.tau_q + self.tau_b} "
                f">= tau_d = {self.tau_d}"
            )
        if not self.qp_sections:
            raise InvalidParameter("q_p needs at least one section")

    def sections(self, target_filter):
        return self.qp_sections if target_filter == "q_p" else self.bp_sections

    def qp(self, omega):
        return chain_response(self.qp_sections, omega)

    def bp(self, omega):
        return chain_response(self.bp_sections, omega)

    def q(self, omega):
        return self.qp(omega) * np.exp(1j * omega * self.tau_q)

    def b(self, omega):
        return self.bp(omega) * np.exp(1j * omega * self.tau_b)

    def with_section(self, target_filter, index, section):
        """Copy with one section of q_p or b_p replaced"""
        sections = list(self.sections(target_filter))
        sections[index] = section
        if target_filter == "q_p":
            return dataclasses.replace(self, qp_sections=tuple(sections))
        return dataclasses.replace(self, bp_sections=tuple(sections))

    def disabled(self):
        """Same controller with the repetitive path switched off (q_p = 0)"""
        return dataclasses.replace(self, qp_sections=(BiquadSection(n0=0.0, d0=1.0),))


@dataclass(frozen=True)
class WeightEntry:
    k: int
    omega: float
    ws: float
    wt: float
    band: str


@dataclass(frozen=True)
class WeightSchedule:
    """Weights |W_S|, |W_T| at the harmonics omega_k = 2*pi*k/tau_d"""

    tau_d: float
    entries: tuple = ()
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidParameter(f"epsilon must lie in (0, 1), got {self.epsilon}")
        previous = -math.inf
        for i, entry in enumerate(self.entries):
            if entry.band not in BANDS:
                raise InvalidParameter(f"row {i}: band must be one of {BANDS}, got {entry.band!r}")
            if entry.k < 1:
                raise InvalidParameter(f"row {i}: harmonic index must be >= 1")
            if entry.ws < 0 or entry.wt < 0:
                raise InvalidParameter(f"row {i}: weights must be non-negative")
            if entry.band == "NP" and entry.wt != 0:
                raise InvalidParameter(f"row {i}: NP rows require wt = 0")
            if entry.band == "RS" and entry.ws != 0:
                raise InvalidParameter(f"row {i}: RS rows require ws = 0")
            if entry.omega != harmonic(entry.k, self.tau_d):
                raise InvalidParameter(f"row {i}: omega must equal 2*pi*k/tau_d")
            if not entry.omega > previous:
                raise InvalidParameter(f"row {i}: frequencies must be strictly increasing")
            previous = entry.omega

    @classmethod
    def from_table(cls, tau_d, rows, epsilon=DEFAULT_EPSILON):
        """
        Build from (k, ws, wt, band) rows; omega is derived, never entered.

        Args:
            tau_d (float): Period of the exogenous signal
            rows: Iterable of (k, ws, wt, band)
            epsilon (float): Regeneration margin

        Returns:
            WeightSchedule
        """
        entries = [
            WeightEntry(int(k), harmonic(int(k), tau_d), float(ws), float(wt), band)
            for k, ws, wt, band in rows
        ]
        return cls(tau_d, tuple(entries), epsilon)

    def rows(self):
        return [(e.k, e.ws, e.wt, e.band) for e in self.entries]

    @property
    def omegas(self):
        return [e.omega for e in self.entries]

    def split(self):
        """
        Separate performance and stability constraint sets.

        Every RP row becomes a ws-only NP row and a wt-only RS row, which is the
        older approach of mapping nominal performance and robust stability apart.

        Returns:
            tuple[WeightSchedule, WeightSchedule]: (performance, stability)
        """
        performance = []
        stability = []
        for e in self.entries:
            if e.band in ("NP", "RP") and e.ws > 0:
                performance.append((e.k, e.ws, 0.0, "NP"))
            if e.band in ("RS", "RP") and e.wt > 0:
                stability.append((e.k, 0.0, e.wt, "RS"))
        return (
            WeightSchedule.from_table(self.tau_d, performance, self.epsilon),
            WeightSchedule.from_table(self.tau_d, stability, self.epsilon),
        )


def harmonic(k, tau_d):
    return 2.0 * math.pi * k / tau_d


# Array kernels shared by the scalar API below and the raster predicates in regions.

def loop_gain_values(G, qp, bp, ctrl, omega):
    """
    Loop gain from precomputed responses; qp/bp may be arrays.

    Returns:
        tuple: (L, regenerative) where regenerative flags elements whose
        positive-feedback denominator is below the relative floor
    """
    loop = np.exp(1j * omega * (-ctrl.tau_d + ctrl.tau_q))
    tap = np.exp(1j * omega * (-ctrl.tau_d + ctrl.tau_q + ctrl.tau_b))
    feedback = qp * loop
    den = 1.0 - feedback
    regenerative = _below_floor(den, feedback)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = G * (1.0 + qp * bp * tap / den)
    return L, regenerative


def sensitivity_values(L):
    """S and T from L, plus a flag for |1+L| below the floor"""
    ret = 1.0 + L
    critical = _below_floor(ret, L)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = 1.0 / ret
        T = L / ret
    return S, T, critical


def perf_values(S, T, ws, wt):
    return ws * np.abs(S) + wt * np.abs(T)


def regeneration_values(G, q, b):
    ret = 1.0 + G
    critical = _below_floor(ret, G)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.abs(q * (1.0 - b * G / ret))
    return R, critical


# Scalar API

def loop_gain(plant, ctrl, omega):
    """
    Loop gain of the repetitive control system at one frequency.

    Args:
        plant (TransferFunction): Nominal plant G_n
        ctrl (RepetitiveController): Repetitive controller
        omega (float): Frequency in rad/s

    Returns:
        complex: L(jω)

    Raises:
        RegenerativePole: 1 - q_p e^{(-tau_d+tau_q)jω} below the floor
    """
    G = eval_tf(plant, omega)
    L, regenerative = loop_gain_values(G, ctrl.qp(omega), ctrl.bp(omega), ctrl, omega)
    if regenerative:
        raise RegenerativePole(omega)
    return complex(L)


def _sensitivities(plant, ctrl, omega):
    L = loop_gain(plant, ctrl, omega)
    S, T, critical = sensitivity_values(L)
    if critical:
        raise CriticalPoint(omega)
    return complex(S), complex(T)


def sensitivity(plant, ctrl, omega):
    """S = 1/(1+L); raises CriticalPoint when |1+L| is below the floor"""
    return _sensitivities(plant, ctrl, omega)[0]


def comp_sensitivity(plant, ctrl, omega):
    """T = L/(1+L); raises CriticalPoint when |1+L| is below the floor"""
    return _sensitivities(plant, ctrl, omega)[1]


def regeneration_spectrum(plant, ctrl, omega):
    """
    R(ω) = |q(jω)(1 - b(jω)G(jω)/(1+G(jω)))|.

    Raises:
        CriticalPoint: |1+G| below the floor
    """
    G = eval_tf(plant, omega)
    R, critical = regeneration_values(G, ctrl.q(omega), ctrl.b(omega))
    if critical:
        raise CriticalPoint(omega, f"plant passes through -1 at omega={omega!r} rad/s")
    return float(R)


@dataclass(frozen=True)
class RegenCheck:
    passed: bool
    worst_omega: float
    worst_value: float
    epsilon: float

    @property
    def margin(self):
        """Distance of the worst R(ω) below 1 - epsilon (negative on failure)"""
        return 1.0 - self.epsilon - self.worst_value


def regen_check_from_values(omega_grid, values, epsilon=DEFAULT_EPSILON):
    """Verdict from an already evaluated spectrum; values[i] belongs to omega_grid[i]"""
    omega_grid = list(omega_grid)
    values = list(values)
    if not omega_grid:
        raise InvalidParameter("regeneration check needs a non-empty grid")
    if len(values) != len(omega_grid):
        raise InvalidParameter(f"{len(values)} spectrum values for {len(omega_grid)} frequencies")
    worst = int(np.argmax(values))
    return RegenCheck(
        passed=bool(values[worst] < 1.0 - epsilon),
        worst_omega=float(omega_grid[worst]),
        worst_value=float(values[worst]),
        epsilon=epsilon,
    )


def regen_stability_check(plant, ctrl, omega_grid, epsilon=DEFAULT_EPSILON):
    """
    Sufficient stability test R(ω) < 1 - epsilon over a grid.

    Args:
        plant (TransferFunction): Plant
        ctrl (RepetitiveController): Controller
        omega_grid: Non-empty frequencies in rad/s
        epsilon (float): Required margin

    Returns:
        RegenCheck: Verdict plus the worst frequency and value
    """
    omega_grid = list(omega_grid)
    if not omega_grid:
        raise InvalidParameter("regeneration check needs a non-empty grid")
    values = [regeneration_spectrum(plant, ctrl, w) for w in omega_grid]
    return regen_check_from_values(omega_grid, values, epsilon)


def robust_perf_value(plant, ctrl, ws, wt, omega):
    """
    |W_S||S(jω)| + |W_T||T(jω)|; the design requires a value below 1.

    Raises:
        RegenerativePole, CriticalPoint: propagated from the loop algebra
    """
    S, T = _sensitivities(plant, ctrl, omega)
    return float(perf_values(S, T, ws, wt))


def default_regen_grid(tau_d, omega_last=None, points=400):
    """Log-spaced grid from omega_1/10 to 4*omega_last"""
    omega_1 = harmonic(1, tau_d)
    omega_last = omega_last or omega_1
    return np.logspace(math.log10(omega_1 / 10.0), math.log10(4.0 * omega_last), points)


def envelopes(plant, ctrl, omegas):
    """
    Dense-grid |S|, |T| and R(ω), NaN where the loop algebra is singular.

    Returns:
        dict: omega, abs_S, abs_T, regen arrays
    """
    omegas = np.asarray(omegas, dtype=float)
    G = plant.response(omegas)
    qp = np.array([ctrl.qp(w) for w in omegas])
    bp = np.array([ctrl.bp(w) for w in omegas])
    L, regenerative = loop_gain_values(G, qp, bp, ctrl, omegas)
    S, T, critical = sensitivity_values(L)
    bad = regenerative | critical
    R, _ = regeneration_values(G, qp * np.exp(1j * omegas * ctrl.tau_q),
                               bp * np.exp(1j * omegas * ctrl.tau_b))
    return {
        "omega": omegas,
        "abs_S": np.where(bad, np.nan, np.abs(S)),
        "abs_T": np.where(bad, np.nan, np.abs(T)),
        "regen": R,
    }
