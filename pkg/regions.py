"""
Solution regions in the controller parameter plane.
Rasterizes the design inequalities per frequency, classifies the side of each
point-condition curve, intersects everything into the overall region, picks a
design point and exports region artifacts.
"""

import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

import plots
from errors import (
    DesignError,
    EmptyCurve,
    EmptyRegion,
    InvalidParameter,
    MismatchedGrids,
    UnsupportedFormat,
)
from freqresp import section_response
from pointcond import DEFAULT_THETA_RESOLUTION, trace_point_condition_curve
from repcon import (
    default_regen_grid,
    loop_gain_values,
    perf_values,
    regeneration_values,
    sensitivity_values,
)

DEFAULT_RASTER = (512, 512)
DEFAULT_REGEN_POINTS = 400
BOUNDARY_BAND = 2
# Cell coordinate for p <= 0 on a log axis: one cell past the low edge, so no
# cell centre lies beyond it.
LOG_AXIS_FLOOR = -1.5
STRATEGIES = ("centroid", "max-clearance")
FORMATS = ("json", "csv", "svg")


@dataclass(frozen=True)
class ParameterGrid:
    """Cell-centred raster over a ParameterBox; rows follow p2, columns p1"""

    box: object
    nx: int = DEFAULT_RASTER[0]
    ny: int = DEFAULT_RASTER[1]

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InvalidParameter("raster resolution must be positive")

    @staticmethod
    def _axis(lo, hi, n, log):
        if log:
            edges = np.linspace(math.log10(lo), math.log10(hi), n + 1)
            return 10.0 ** (0.5 * (edges[:-1] + edges[1:]))
        edges = np.linspace(lo, hi, n + 1)
        return 0.5 * (edges[:-1] + edges[1:])

    @property
    def p1_centers(self):
        return self._axis(self.box.p1_lo, self.box.p1_hi, self.nx, self.box.p1_log)

    @property
    def p2_centers(self):
        return self._axis(self.box.p2_lo, self.box.p2_hi, self.ny, self.box.p2_log)

    def mesh(self):
        return np.meshgrid(self.p1_centers, self.p2_centers)

    def cell_center(self, ix, iy):
        return float(self.p1_centers[ix]), float(self.p2_centers[iy])

    def cell_coords(self, points):
        """
        Fractional (x, y) cell coordinates of parameter points; cell (i, j)
        has its centre at (i, j).

        A non-positive value on a log axis lies below every box value, so it
        is pinned to LOG_AXIS_FLOOR (or lower, if a positive point of the same
        batch already maps further out). Rings keep every vertex and their
        winding around the cells is unchanged.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)

        def scale(values, lo, hi, n, log):
            if not log:
                return (values - lo) / (hi - lo) * n - 0.5
            positive = values > 0
            logs = np.log10(np.where(positive, values, 1.0))
            lo, hi = math.log10(lo), math.log10(hi)
            coords = np.where(positive, (logs - lo) / (hi - lo) * n - 0.5, np.nan)
            reachable = coords[np.isfinite(coords)]
            floor = min(LOG_AXIS_FLOOR, float(reachable.min()) - 1.0) if reachable.size else LOG_AXIS_FLOOR
            return np.where(positive | np.isnan(values), coords, floor)

        b = self.box
        x = scale(points[:, 0], b.p1_lo, b.p1_hi, self.nx, b.p1_log)
        y = scale(points[:, 1], b.p2_lo, b.p2_hi, self.ny, b.p2_log)
        return np.column_stack((x, y))


class DesignEvaluator:
    """
    Vectorized design inequalities for a plant, controller template and
    parameter selection. Parameter arguments are equally-shaped arrays.
    """

    def __init__(self, plant, ctrl_template, selection, logger=None):
        self.plant = plant
        self.ctrl = ctrl_template
        self.selection = selection
        self.logger = logger or logging.getLogger(__name__)
        self.section = selection.section(ctrl_template)
        self.sections = ctrl_template.sections(selection.target_filter)

    def filter_response(self, P1, P2, omega):
        """Response of the filter holding the free slots, sections in chain order"""
        coeffs = self.selection.apply(self.section.coefficients(), P1, P2)
        value = 1.0 + 0j
        with np.errstate(divide="ignore", invalid="ignore"):
            for i, section in enumerate(self.sections):
                if i == self.selection.section_index:
                    value = value * section_response(coeffs, omega)
                else:
                    value = value * section.response(omega)
        return value

    def _filters(self, P1, P2, omega):
        free = self.filter_response(P1, P2, omega)
        if self.selection.target_filter == "q_p":
            return free, self.ctrl.bp(omega)
        return self.ctrl.qp(omega), free

    def perf(self, ws, wt, omega, P1, P2):
        """
        |W_S||S| + |W_T||T| at every parameter point.

        Returns:
            tuple: (values, regenerative, critical) arrays
        """
        G = self.plant.response(omega)
        qp, bp = self._filters(P1, P2, omega)
        L, regenerative = loop_gain_values(G, qp, bp, self.ctrl, omega)
        S, T, critical = sensitivity_values(L)
        with np.errstate(invalid="ignore"):
            values = perf_values(S, T, ws, wt)
        return values, regenerative, critical

    def perf_predicate(self, ws, wt, omega):
        def predicate(P1, P2):
            values, regenerative, critical = self.perf(ws, wt, omega, P1, P2)
            with np.errstate(invalid="ignore"):
                return np.isfinite(values) & (values < 1.0) & ~regenerative & ~critical
        return predicate

    def regen(self, omegas, P1, P2):
        """
        Worst regeneration spectrum over a frequency grid.

        Returns:
            tuple: (worst R, omega of worst R, critical-anywhere flag) arrays
        """
        worst = np.full(np.shape(P1), -np.inf)
        worst_omega = np.full(np.shape(P1), np.nan)
        critical_any = np.zeros(np.shape(P1), dtype=bool)
        for omega in omegas:
            G = self.plant.response(omega)
            qp, bp = self._filters(P1, P2, omega)
            R, critical = regeneration_values(
                G, qp * np.exp(1j * omega * self.ctrl.tau_q), bp * np.exp(1j * omega * self.ctrl.tau_b)
            )
            R = np.where(np.isfinite(R), R, np.inf)
            higher = R > worst
            worst = np.where(higher, R, worst)
            worst_omega = np.where(higher, omega, worst_omega)
            critical_any |= np.broadcast_to(critical, np.shape(P1))
        return worst, worst_omega, critical_any

    def stab_predicate(self, omegas, epsilon):
        def predicate(P1, P2):
            worst, _, critical = self.regen(omegas, P1, P2)
            return (worst < 1.0 - epsilon) & ~critical
        return predicate


@dataclass
class SolutionRegion:
    omega: float
    band: str
    raster: np.ndarray
    grid: ParameterGrid
    curve: list = field(default_factory=list)
    side: str = None

    @property
    def count(self):
        return int(self.raster.sum())


@dataclass
class OverallRegion:
    raster: np.ndarray
    grid: ParameterGrid
    contributing: list = field(default_factory=list)
    layers: dict = field(default_factory=dict)

    @property
    def nonempty(self):
        return bool(self.raster.any())

    @property
    def count(self):
        return int(self.raster.sum())


def winding_number(ring, nx, ny):
    """
    Winding number of a closed ring (in cell coordinates) around every cell
    centre of an ny-by-nx grid.
    """
    ring = np.asarray(ring, dtype=float)
    ring = ring[np.all(np.isfinite(ring), axis=1)]
    diff = np.zeros((ny, nx + 1), dtype=int)
    if len(ring) < 3:
        return diff[:, :nx]
    starts = ring
    ends = np.roll(ring, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(starts, ends):
        if y0 == y1:
            continue
        upward = y1 > y0
        lo, hi = (y0, y1) if upward else (y1, y0)
        # Upward edges own [y0, y1), downward edges own [y1, y0).
        rows = np.arange(max(math.ceil(lo), 0), min(math.ceil(hi), ny))
        if rows.size == 0:
            continue
        xc = x0 + (rows - y0) * (x1 - x0) / (y1 - y0)
        cut = np.clip(np.ceil(xc), 0, nx).astype(int)
        sign = 1 if upward else -1
        np.add.at(diff, (rows, np.zeros_like(rows)), sign)
        np.add.at(diff, (rows, cut), -sign)
    return np.cumsum(diff[:, :nx], axis=1)


def inside_mask(rings, grid):
    wn = np.zeros((grid.ny, grid.nx), dtype=int)
    for ring in rings:
        wn += winding_number(grid.cell_coords(ring), grid.nx, grid.ny)
    return wn != 0


def curve_cells(rings, grid):
    """Cells touched by the densified curve polylines"""
    touched = np.zeros((grid.ny, grid.nx), dtype=bool)
    cap = 4 * (grid.nx + grid.ny)
    for ring in rings:
        coords = grid.cell_coords(ring)
        coords = coords[np.all(np.isfinite(coords), axis=1)]
        if len(coords) == 0:
            continue
        closed = np.vstack((coords, coords[:1]))
        for (x0, y0), (x1, y1) in zip(closed[:-1], closed[1:]):
            n = min(int(math.ceil(2.0 * max(abs(x1 - x0), abs(y1 - y0)))) + 1, cap)
            xs = np.rint(np.linspace(x0, x1, n)).astype(int)
            ys = np.rint(np.linspace(y0, y1, n)).astype(int)
            keep = (xs >= 0) & (xs < grid.nx) & (ys >= 0) & (ys < grid.ny)
            touched[ys[keep], xs[keep]] = True
    return touched


def classify_region(curve, predicate, grid, omega=None, band=None):
    """
    Region where the design inequality holds, with the side of the curve it lies on.

    Args:
        curve: List of rings (arrays of (p1, p2)), possibly empty
        predicate: Callable (P1, P2) -> bool array
        grid (ParameterGrid): Raster definition
        omega (float): Frequency the region belongs to
        band (str): NP, RP, RS or STAB

    Returns:
        SolutionRegion: Raster filled by direct predicate evaluation
    """
    P1, P2 = grid.mesh()
    raster = np.asarray(predicate(P1, P2), dtype=bool)
    side = None
    if curve:
        inside = inside_mask(curve, grid)
        inner = raster[inside].mean() if inside.any() else 0.0
        outer = raster[~inside].mean() if (~inside).any() else 0.0
        side = "inside" if inner >= outer else "outside"
    return SolutionRegion(omega, band, raster, grid, list(curve), side)


def curve_agreement(region):
    """
    Fraction of cells more than two cells away from the curve where the
    curve-side classification matches the raster; None without a curve.
    """
    if not region.curve or region.side is None:
        return None
    near = ndimage.binary_dilation(
        curve_cells(region.curve, region.grid),
        structure=np.ones((3, 3), dtype=bool),
        iterations=BOUNDARY_BAND,
    )
    inside = inside_mask(region.curve, region.grid)
    predicted = inside if region.side == "inside" else ~inside
    far = ~near
    if not far.any():
        return None
    return float(np.mean(predicted[far] == region.raster[far]))


@dataclass(frozen=True)
class RowVerdict:
    k: int
    omega: float
    band: str
    value: float
    passed: bool
    diagnostic: str = ""


@dataclass
class MembershipReport:
    verdict: bool
    rows: list
    regen: dict = None

    def failed_rows(self):
        return [row for row in self.rows if not row.passed]


def membership_oracle(point, plant, ctrl_template, selection, schedule,
                      check_stability=True, regen_grid=None, logger=None):
    """
    Direct evaluation of every design inequality at one parameter point.

    Evaluation failures count as violations and carry a diagnostic.

    Args:
        point: (p1, p2) inside selection.box
        plant (TransferFunction): Plant
        ctrl_template (RepetitiveController): Controller template
        selection (ParameterSelection): Free slots
        schedule (WeightSchedule): Design frequencies and weights
        check_stability (bool): Also require R(ω) < 1 - epsilon
        regen_grid: Frequencies for the regeneration test

    Returns:
        MembershipReport
    """
    logger = logger or logging.getLogger(__name__)
    p1, p2 = (float(v) for v in point)
    if not selection.box.contains(p1, p2):
        raise InvalidParameter(f"point ({p1:.6g}, {p2:.6g}) lies outside the parameter box")

    evaluator = DesignEvaluator(plant, ctrl_template, selection, logger)
    P1, P2 = np.array([p1]), np.array([p2])
    rows = []
    for entry in schedule.entries:
        try:
            values, regenerative, critical = evaluator.perf(entry.ws, entry.wt, entry.omega, P1, P2)
        except DesignError as e:
            rows.append(RowVerdict(entry.k, entry.omega, entry.band, math.nan, False, str(e)))
            continue
        value = float(values[0])
        diagnostic = ""
        if regenerative[0]:
            diagnostic = "regenerative pole"
        elif critical[0]:
            diagnostic = "loop passes through -1"
        elif not math.isfinite(value):
            diagnostic = "evaluation failed"
        passed = not diagnostic and value < 1.0
        if diagnostic:
            logger.debug(f"k={entry.k}: {diagnostic}")
        rows.append(RowVerdict(entry.k, entry.omega, entry.band, value, passed, diagnostic))

    verdict = all(row.passed for row in rows)
    regen = None
    if check_stability:
        if regen_grid is None:
            regen_grid = default_regen_grid(schedule.tau_d, max(schedule.omegas, default=None))
        worst, worst_omega, critical = evaluator.regen(regen_grid, P1, P2)
        passed = bool(worst[0] < 1.0 - schedule.epsilon and not critical[0])
        regen = {
            "passed": passed,
            "worst_value": float(worst[0]),
            "worst_omega": float(worst_omega[0]),
            "epsilon": schedule.epsilon,
        }
        verdict = verdict and passed
    return MembershipReport(verdict, rows, regen)


def _check_grids(regions):
    grid = regions[0].grid
    for region in regions[1:]:
        if region.grid != grid or region.raster.shape != regions[0].raster.shape:
            raise MismatchedGrids("regions do not share box and resolution")
    return grid


def intersect_regions(regions):
    """
    Cellwise AND of region rasters.

    Returns:
        OverallRegion: With per-band layers and the contributing (omega, band) list
    """
    regions = list(regions)
    if not regions:
        raise InvalidParameter("nothing to intersect")
    grid = _check_grids(regions)
    raster = np.ones_like(regions[0].raster, dtype=bool)
    layers = {}
    contributing = []
    for region in regions:
        raster &= region.raster
        layers[region.band] = layers.get(region.band, np.ones_like(raster)) & region.raster
        contributing.append((region.omega, region.band))
    return OverallRegion(raster, grid, contributing, layers)


def full_region(grid):
    return OverallRegion(np.ones((grid.ny, grid.nx), dtype=bool), grid)


def pick_point(overall, strategy="max-clearance"):
    """
    Choose a design point inside the overall region.

    centroid picks the member cell nearest the member centroid; max-clearance
    picks the cell with the largest chessboard distance to the region boundary
    (box edges count as boundary).

    Returns:
        tuple[float, float]: Cell-centre (p1, p2)

    Raises:
        EmptyRegion: Region has no member cell
    """
    if strategy not in STRATEGIES:
        raise InvalidParameter(f"unknown pick strategy {strategy!r}")
    if not overall.nonempty:
        raise EmptyRegion("overall solution region is empty")
    raster = overall.raster
    if strategy == "max-clearance":
        padded = np.pad(raster, 1, constant_values=False)
        clearance = ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1]
        iy, ix = np.unravel_index(int(np.argmax(clearance)), raster.shape)
    else:
        ys, xs = np.nonzero(raster)
        cy, cx = ys.mean(), xs.mean()
        nearest = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
        iy, ix = ys[nearest], xs[nearest]
    return overall.grid.cell_center(int(ix), int(iy))


def encode_rle(raster):
    """Per row, [start, length] runs of member cells"""
    rows = []
    for row in raster:
        padded = np.concatenate(([False], row, [False])).astype(np.int8)
        changes = np.flatnonzero(np.diff(padded))
        rows.append([[int(s), int(e - s)] for s, e in zip(changes[::2], changes[1::2])])
    return rows


def decode_rle(rows, nx, ny):
    raster = np.zeros((ny, nx), dtype=bool)
    for iy, runs in enumerate(rows):
        for start, length in runs:
            raster[iy, start:start + length] = True
    return raster


def _box_dict(box):
    return {
        "p1": [box.p1_lo, box.p1_hi],
        "p2": [box.p2_lo, box.p2_hi],
        "log": [box.p1_log, box.p2_log],
    }


def export_region(region, fmt, config_hash=""):
    """
    Serialize a SolutionRegion or OverallRegion.

    Args:
        region: SolutionRegion or OverallRegion
        fmt (str): json, csv or svg
        config_hash (str): Content hash of the generating config

    Returns:
        bytes: Deterministic artifact
    """
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unsupported region format {fmt!r}; expected one of {FORMATS}")
    grid = region.grid
    overall = isinstance(region, OverallRegion)

    if fmt == "json":
        doc = {
            "config_hash": config_hash,
            "kind": "overall" if overall else "region",
            "box": _box_dict(grid.box),
            "resolution": [grid.nx, grid.ny],
            "true_count": region.count,
            "rows": encode_rle(region.raster),
        }
        if overall:
            doc["nonempty"] = region.nonempty
            doc["contributing"] = [
                {"omega": omega, "band": band} for omega, band in region.contributing
            ]
        else:
            doc["omega"] = region.omega
            doc["band"] = region.band
            doc["side"] = region.side
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")

    if fmt == "csv":
        ys, xs = np.nonzero(region.raster)
        cells = np.column_stack((grid.p1_centers[xs], grid.p2_centers[ys]))
        buf = io.StringIO()
        np.savetxt(buf, cells.reshape(-1, 2), fmt="%.17g", delimiter=",",
                   header=f"p1,p2\nconfig_hash={config_hash}", comments="# ")
        return buf.getvalue().encode("utf-8")

    return plots.region_svg(region, config_hash)


@dataclass
class MapResult:
    regions: list
    overall: OverallRegion
    stats: list
    curves: dict = field(default_factory=dict)

    def empty_rows(self):
        return [s for s in self.stats if s["cells"] == 0]


class RegionMapper:
    """Runs the per-frequency mapping loop and intersects the results"""

    def __init__(self, plant, ctrl_template, selection, grid,
                 theta_resolution=DEFAULT_THETA_RESOLUTION,
                 regen_points=DEFAULT_REGEN_POINTS, logger=None):
        """
        Initialize mapper.

        Args:
            plant (TransferFunction): Plant
            ctrl_template (RepetitiveController): Controller template
            selection (ParameterSelection): Free slots and box
            grid (ParameterGrid): Raster definition
            theta_resolution (int): Theta samples per curve
            regen_points (int): Points in the regeneration grid
            logger (logging.Logger, optional): Logger instance
        """
        self.plant = plant
        self.ctrl = ctrl_template
        self.selection = selection
        self.grid = grid
        self.theta_resolution = theta_resolution
        self.regen_points = regen_points
        self.logger = logger or logging.getLogger(__name__)
        self.evaluator = DesignEvaluator(plant, ctrl_template, selection, self.logger)

    def map_row(self, entry):
        """Curve and region for one schedule row"""
        curve = None
        note = ""
        try:
            curve = trace_point_condition_curve(
                self.plant, self.ctrl, self.selection, entry.ws, entry.wt, entry.omega,
                self.theta_resolution,
            )
        except EmptyCurve as e:
            note = str(e)
        except DesignError as e:
            note = f"curve tracing failed: {e}"
            self.logger.warning(f"k={entry.k}: {note}")

        try:
            predicate = self.evaluator.perf_predicate(entry.ws, entry.wt, entry.omega)
            region = classify_region(curve.rings() if curve else [], predicate, self.grid,
                                     entry.omega, entry.band)
        except DesignError as e:
            note = f"region evaluation failed: {e}"
            self.logger.warning(f"k={entry.k}: {note}")
            region = SolutionRegion(entry.omega, entry.band,
                                    np.zeros((self.grid.ny, self.grid.nx), dtype=bool), self.grid)

        stat = {
            "k": entry.k,
            "omega": entry.omega,
            "band": entry.band,
            "ws": entry.ws,
            "wt": entry.wt,
            "curve_points": len(curve.points) if curve else 0,
            "skipped": curve.skipped if curve else 0,
            "closure_gap": curve.closure_gap() if curve else None,
            "side": region.side,
            "cells": region.count,
            "note": note,
        }
        self.logger.info(
            f"k={entry.k:>3} f={entry.omega / (2 * math.pi) / 1e3:8.2f} kHz {entry.band}: "
            f"{stat['curve_points']} curve points, {region.count} cells"
        )
        return curve, region, stat

    def stability_region(self, schedule):
        grid = default_regen_grid(schedule.tau_d, max(schedule.omegas, default=None), self.regen_points)
        predicate = self.evaluator.stab_predicate(grid, schedule.epsilon)
        return classify_region([], predicate, self.grid, None, "STAB")

    def run(self, schedule, stability=True):
        """
        Map every schedule row (plus the regeneration condition) and intersect.

        Args:
            schedule (WeightSchedule): Design rows
            stability (bool): Include the STAB region

        Returns:
            MapResult
        """
        self.logger.info(f"Mapping {len(schedule.entries)} frequencies on a "
                         f"{self.grid.nx}x{self.grid.ny} raster")
        regions = []
        stats = []
        curves = {}
        for entry in schedule.entries:
            curve, region, stat = self.map_row(entry)
            regions.append(region)
            stats.append(stat)
            if curve:
                curves[entry.k] = curve

        if stability:
            region = self.stability_region(schedule)
            regions.append(region)
            stats.append({
                "k": None, "omega": None, "band": "STAB", "ws": None, "wt": None,
                "curve_points": 0, "skipped": 0, "closure_gap": None, "side": None,
                "cells": region.count, "note": "",
            })
            self.logger.info(f"STAB (R < {1 - schedule.epsilon:g}): {region.count} cells")

        overall = intersect_regions(regions) if regions else full_region(self.grid)
        self.logger.info(f"Overall region: {overall.count} cells "
                         f"({'nonempty' if overall.nonempty else 'EMPTY'})")
        return MapResult(regions, overall, stats, curves)

    def split_region(self, schedule, stab=None):
        """
        Region of the older split design: nominal performance and robust
        stability rows mapped separately, then intersected.

        Args:
            schedule (WeightSchedule): Design rows; RP rows are split in two
            stab (SolutionRegion, optional): Regeneration region to include

        Returns:
            OverallRegion
        """
        performance, robust = schedule.split()
        regions = (self.run(performance, stability=False).regions
                   + self.run(robust, stability=False).regions)
        if stab is not None:
            regions.append(stab)
        split = intersect_regions(regions) if regions else full_region(self.grid)
        self.logger.info(f"Split region: {split.count} cells")
        return split


def map_regions(plant, ctrl_template, selection, schedule, grid, stability=True,
                theta_resolution=DEFAULT_THETA_RESOLUTION,
                regen_points=DEFAULT_REGEN_POINTS, logger=None):
    """Convenience wrapper around RegionMapper.run"""
    mapper = RegionMapper(plant, ctrl_template, selection, grid,
                          theta_resolution, regen_points, logger)
    return mapper.run(schedule, stability)
