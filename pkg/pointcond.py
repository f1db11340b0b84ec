"""
Robust-performance point condition at one frequency.
Sweeps the loop-gain angle, solves the cosine-rule quadratic for |L|, back-solves
the repetitive filter target and the two chosen controller coefficients,
producing the closed point-condition curve in the parameter plane.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from errors import (
    DegenerateBackSolve,
    EmptyCurve,
    InvalidParameter,
    NoSolution,
    SingularSystem,
)
from freqresp import BiquadSection, eval_tf
from repcon import REL_FLOOR

DEFAULT_THETA_RESOLUTION = 2048
THETA_TOL = 1e-10
LINEAR_TOL = 1e-12
SINGULAR_TOL = 1e-12
RESIDUAL_TOL = 1e-9
FILTERS = ("q_p", "b_p")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThetaInterval:
    lo: float
    hi: float


@dataclass(frozen=True)
class ParameterBox:
    """Rectangle in the (p1, p2) plane; log flags choose per-axis spacing"""

    p1_lo: float
    p1_hi: float
    p2_lo: float
    p2_hi: float
    p1_log: bool = False
    p2_log: bool = False

    def __post_init__(self):
        if not (self.p1_hi > self.p1_lo and self.p2_hi > self.p2_lo):
            raise InvalidParameter("parameter box must have positive area")
        if (self.p1_log and self.p1_lo <= 0) or (self.p2_log and self.p2_lo <= 0):
            raise InvalidParameter("log-spaced axes need positive bounds")

    def contains(self, p1, p2):
        return self.p1_lo <= p1 <= self.p1_hi and self.p2_lo <= p2 <= self.p2_hi


@dataclass(frozen=True)
class ParameterSelection:
    """
    The two free coefficients of one biquad section of q_p or b_p.

    tie=(slave, master) forces slave ≡ master, e.g. ("n0", "d0") for a
    unity-dc-gain low-pass where the free master is d0.
    """

    target_filter: str
    section_index: int
    free_slots: tuple
    box: ParameterBox
    tie: tuple = None
    clip_to_box: bool = False

    def __post_init__(self):
        object.__setattr__(self, "free_slots", tuple(self.free_slots))
        if self.tie is not None:
            object.__setattr__(self, "tie", tuple(self.tie))
        if self.target_filter not in FILTERS:
            raise InvalidParameter(f"target filter must be one of {FILTERS}")
        if len(self.free_slots) != 2 or self.free_slots[0] == self.free_slots[1]:
            raise InvalidParameter("exactly two distinct free slots are required")
        for slot in self.free_slots:
            if slot not in BiquadSection.SLOTS:
                raise InvalidParameter(f"unknown coefficient slot {slot!r}")
        if self.tie is not None:
            slave, master = self.tie
            if master not in self.free_slots:
                raise InvalidParameter("tie must reference a free slot")
            if slave in self.free_slots or slave not in BiquadSection.SLOTS:
                raise InvalidParameter("tied slot must be a fixed coefficient slot")

    def apply(self, coeffs, p1, p2):
        """Coefficient dict with the free (and tied) slots set; p1/p2 may be arrays"""
        coeffs = dict(coeffs)
        coeffs[self.free_slots[0]] = p1
        coeffs[self.free_slots[1]] = p2
        if self.tie is not None:
            slave, master = self.tie
            coeffs[slave] = coeffs[master]
        return coeffs

    def section(self, ctrl):
        sections = ctrl.sections(self.target_filter)
        if not 0 <= self.section_index < len(sections):
            raise InvalidParameter(
                f"{self.target_filter} has no section {self.section_index}"
            )
        return sections[self.section_index]

    def controller_at(self, ctrl, p1, p2):
        """Concrete controller with the two parameters substituted"""
        section = BiquadSection(**self.apply(self.section(ctrl).coefficients(), float(p1), float(p2)))
        return ctrl.with_section(self.target_filter, self.section_index, section)


@dataclass(frozen=True)
class CurvePoint:
    theta: float
    branch: str
    L: complex
    p1: float
    p2: float


@dataclass
class PointConditionCurve:
    omega: float
    ws: float
    wt: float
    points: list
    intervals: list
    skipped: int = 0

    def rings(self):
        """
        Closed point sequences, one per active theta interval.

        The plus branch runs forward in theta and the minus branch returns
        backwards, so both roots of one interval form a single loop. An
        interval ending at 2*pi is joined to one starting at 0.
        """
        groups = [[(iv.lo, iv.hi, 0.0)] for iv in self.intervals]
        if (len(groups) > 1 and self.intervals[0].lo == 0.0
                and self.intervals[-1].hi == 2.0 * math.pi):
            last = groups.pop()
            groups[0] = [(last[0][0], last[0][1], 2.0 * math.pi)] + groups[0]

        rings = []
        for group in groups:
            keyed = [
                (p.theta - shift, p)
                for lo, hi, shift in group
                for p in self.points
                if lo <= p.theta <= hi
            ]
            plus = sorted((k, p.p1, p.p2) for k, p in keyed if p.branch == "plus")
            minus = sorted(((k, p.p1, p.p2) for k, p in keyed if p.branch == "minus"), reverse=True)
            ring = [(p1, p2) for _, p1, p2 in plus + minus]
            if len(ring) >= 2:
                rings.append(np.array(ring))
        return rings

    def closure_gap(self):
        """Largest first-to-last distance over the rings, relative to ring extent"""
        gaps = []
        for ring in self.rings():
            extent = np.ptp(ring, axis=0).max()
            if extent > 0:
                gaps.append(float(np.hypot(*(ring[0] - ring[-1])) / extent))
        return max(gaps) if gaps else math.nan


def discriminant(ws, wt, theta):
    """
    Δ_M = cos²θ + ws² + wt² − 2·ws·wt·cosθ − 1.

    The quadratic in |L| from the cosine rule has real roots iff Δ_M ≥ 0.
    Works elementwise on arrays.
    """
    c = np.cos(theta)
    return c * c + ws * ws + wt * wt - 2.0 * ws * wt * c - 1.0


def loop_magnitude_branches(ws, wt, theta):
    """
    Roots of (1−wt²)x² + 2(cosθ − ws·wt)x + (1 − ws²) = 0 labelled by branch.

    Returns:
        list[tuple[str, float]]: (branch, x) for each positive real root;
        "plus" is the root taken with +sqrt(Δ_M)
    """
    delta = float(discriminant(ws, wt, theta))
    a = 1.0 - wt * wt
    bh = math.cos(theta) - ws * wt
    c = 1.0 - ws * ws
    roots = []
    if abs(a) < LINEAR_TOL:
        if bh != 0.0:
            roots.append(("plus", -c / (2.0 * bh)))
    elif delta >= 0.0:
        sq = math.sqrt(delta)
        # Cancellation-free pair: t/a and c/t are the two roots.
        t = -(bh + math.copysign(sq, bh))
        if t == 0.0:
            roots.append(("plus", 0.0))
            roots.append(("minus", 0.0))
        elif bh >= 0.0:
            roots.append(("plus", c / t))
            roots.append(("minus", t / a))
        else:
            roots.append(("plus", t / a))
            roots.append(("minus", c / t))
    return [(branch, x) for branch, x in roots if x > 0.0 and math.isfinite(x)]


def solve_loop_magnitude(ws, wt, theta):
    """
    Positive |L| solving (|W_S| + |W_T||L|)² = |L|² + 1 + 2|L|cosθ.

    Returns:
        list[float]: 0..2 positive roots in ascending order
    """
    return sorted(x for _, x in loop_magnitude_branches(ws, wt, theta))


def _refine_edge(ws, wt, outside, inside):
    """Bisect the Δ_M sign change between two samples; keep the Δ_M ≥ 0 side"""
    def f(t):
        return float(discriminant(ws, wt, t))

    edge = bisect(f, min(outside, inside), max(outside, inside), xtol=THETA_TOL)
    if f(edge) < 0.0:
        edge += math.copysign(THETA_TOL, inside - outside)
    return edge


def active_theta_intervals(ws, wt, resolution=DEFAULT_THETA_RESOLUTION):
    """
    Maximal theta intervals on [0, 2π] where Δ_M ≥ 0.

    Args:
        ws (float): |W_S| at the frequency
        wt (float): |W_T| at the frequency
        resolution (int): Number of samples, at least 16

    Returns:
        list[ThetaInterval]: Possibly empty; edges refined to 1e-10 rad
    """
    if resolution < 16:
        raise InvalidParameter("theta resolution must be at least 16")
    thetas = np.linspace(0.0, 2.0 * math.pi, resolution + 1)
    active = discriminant(ws, wt, thetas) >= 0.0
    intervals = []
    i = 0
    n = len(thetas)
    while i < n:
        if not active[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and active[j + 1]:
            j += 1
        lo = thetas[i] if i == 0 else _refine_edge(ws, wt, thetas[i - 1], thetas[i])
        hi = thetas[j] if j == n - 1 else _refine_edge(ws, wt, thetas[j + 1], thetas[j])
        if hi - lo > 1e-9:
            intervals.append(ThetaInterval(float(lo), float(hi)))
        i = j + 1
    return intervals


def backsolve_qp_target(L, G, b, tau_d, tau_q, omega):
    """
    q_p(jω) placing the loop gain at L for a given b(jω).

    Returns:
        complex: (L−G)/(L − G(1−b))·e^{(τ_d−τ_q)jω}

    Raises:
        DegenerateBackSolve: denominator below the relative floor
    """
    den = L - G * (1.0 - b)
    if abs(den) < REL_FLOOR * max(1.0, abs(L), abs(G * (1.0 - b))):
        raise DegenerateBackSolve(f"q_p back-solve denominator vanishes at omega={omega}")
    return (L - G) / den * np.exp(1j * omega * (tau_d - tau_q))


def backsolve_bp_target(L, G, q, tau_d, tau_b, omega):
    """
    b_p(jω) placing the loop gain at L for a given q(jω).

    Returns:
        complex: ((L−G)/G)·((1 − q e^{−jωτ_d})/(q e^{−jωτ_d}))·e^{−jωτ_b}

    Raises:
        DegenerateBackSolve: plant response or delayed q below the floor
    """
    delayed = q * np.exp(-1j * omega * tau_d)
    if abs(G) < REL_FLOOR * max(1.0, abs(L)):
        raise DegenerateBackSolve(f"plant response vanishes at omega={omega}")
    if abs(delayed) < REL_FLOOR:
        raise DegenerateBackSolve(f"q filter vanishes at omega={omega}")
    return ((L - G) / G) * ((1.0 - delayed) / delayed) * np.exp(-1j * omega * tau_b)


def _slot_basis(target, omega):
    """Contribution of each coefficient to N(jω) − target·D(jω)"""
    jw = 1j * omega
    w2 = omega * omega
    return {
        "n2": -w2 + 0j,
        "n1": jw,
        "n0": 1.0 + 0j,
        "d2": target * w2,
        "d1": -target * jw,
        "d0": -target,
    }


def solve_two_params(selection, ctrl, target, omega):
    """
    Back-solve the two free coefficients so the filter response equals target.

    The remaining sections of the filter are divided out of the target, then
    N(jω) − target·D(jω) = 0 is split into a real 2x2 linear system.

    Args:
        selection (ParameterSelection): Free slots, tie and box
        ctrl (RepetitiveController): Supplies all fixed coefficients
        target (complex): Required q_p(jω) or b_p(jω)
        omega (float): Frequency in rad/s, positive

    Returns:
        tuple[float, float]: (p1, p2)

    Raises:
        SingularSystem: condition-scaled determinant below 1e-12
        NoSolution: solution outside the box while clip_to_box is set
    """
    if not (np.isfinite(target.real) and np.isfinite(target.imag)):
        raise DegenerateBackSolve("non-finite filter target")
    if not omega > 0:
        raise InvalidParameter("parameter back-solve needs omega > 0")

    sections = ctrl.sections(selection.target_filter)
    section = selection.section(ctrl)
    local = complex(target)
    for i, other in enumerate(sections):
        if i != selection.section_index:
            resp = other.response(omega)
            if abs(resp) < REL_FLOOR:
                raise DegenerateBackSolve(f"section {i} vanishes at omega={omega}")
            local /= resp

    basis = _slot_basis(local, omega)
    slave = selection.tie[0] if selection.tie else None
    master = selection.tie[1] if selection.tie else None
    coeffs = section.coefficients()

    fixed = sum(
        coeffs[slot] * basis[slot]
        for slot in BiquadSection.SLOTS
        if slot not in selection.free_slots and slot != slave
    )
    cols = []
    for slot in selection.free_slots:
        col = basis[slot] + (basis[slave] if slot == master else 0.0)
        cols.append(col)

    matrix = np.array([[cols[0].real, cols[1].real], [cols[0].imag, cols[1].imag]])
    scale = abs(cols[0]) * abs(cols[1])
    det = np.linalg.det(matrix)
    if scale == 0.0 or abs(det) < SINGULAR_TOL * scale:
        raise SingularSystem(
            f"slots {selection.free_slots} cannot reach target {local:.6g} at omega={omega}"
        )
    p1, p2 = np.linalg.solve(matrix, [-fixed.real, -fixed.imag])

    solved = selection.apply(coeffs, p1, p2)
    n = solved["n0"] - solved["n2"] * omega ** 2 + 1j * solved["n1"] * omega
    d = solved["d0"] - solved["d2"] * omega ** 2 + 1j * solved["d1"] * omega
    if abs(n - local * d) > RESIDUAL_TOL * (abs(n) + abs(local * d)) + 1e-300:
        raise SingularSystem(f"ill-conditioned parameter back-solve at omega={omega}")

    if selection.clip_to_box and not selection.box.contains(p1, p2):
        raise NoSolution(f"solution ({p1:.6g}, {p2:.6g}) outside parameter box")
    return float(p1), float(p2)


def trace_point_condition_curve(plant, ctrl_template, selection, ws, wt, omega,
                                resolution=DEFAULT_THETA_RESOLUTION):
    """
    Point-condition curve at one frequency.

    For each theta in the active intervals and each positive |L| root the loop
    gain L = |L|e^{jθ} is mapped back to the filter target and then to (p1, p2).

    Args:
        plant (TransferFunction): Nominal plant
        ctrl_template (RepetitiveController): Everything except the free slots
        selection (ParameterSelection): Free slots
        ws (float): |W_S| at omega
        wt (float): |W_T| at omega
        omega (float): Frequency in rad/s
        resolution (int): Theta samples on [0, 2π]

    Returns:
        PointConditionCurve: Points ordered by (branch, theta)

    Raises:
        EmptyCurve: No point survived
    """
    G = eval_tf(plant, omega)
    intervals = active_theta_intervals(ws, wt, resolution)
    grid = np.linspace(0.0, 2.0 * math.pi, resolution + 1)

    if selection.target_filter == "q_p":
        other = ctrl_template.b(omega)

        def target_for(L):
            return backsolve_qp_target(L, G, other, ctrl_template.tau_d, ctrl_template.tau_q, omega)
    else:
        other = ctrl_template.q(omega)

        def target_for(L):
            return backsolve_bp_target(L, G, other, ctrl_template.tau_d, ctrl_template.tau_b, omega)

    points = []
    skipped = 0
    for interval in intervals:
        inner = grid[(grid > interval.lo) & (grid < interval.hi)]
        for theta in np.concatenate(([interval.lo], inner, [interval.hi])):
            theta = float(theta)
            for branch, magnitude in loop_magnitude_branches(ws, wt, theta):
                L = magnitude * complex(math.cos(theta), math.sin(theta))
                try:
                    p1, p2 = solve_two_params(selection, ctrl_template, target_for(L), omega)
                except (DegenerateBackSolve, SingularSystem, NoSolution) as e:
                    logger.debug(f"skipped theta={theta:.6f} ({branch}): {e}")
                    skipped += 1
                    continue
                points.append(CurvePoint(theta, branch, L, p1, p2))

    if not points:
        raise EmptyCurve(omega, skipped)
    points.sort(key=lambda p: (p.branch != "plus", p.theta))
    if skipped:
        logger.debug(f"omega={omega:.6g}: {skipped} curve samples skipped")
    return PointConditionCurve(omega, ws, wt, points, intervals, skipped)
