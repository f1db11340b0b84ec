#!/usr/bin/env python3
"""
Repetitive-control robust performance mapper.
Maps the design constraints into the two-parameter plane, checks a candidate
point, draws Bode and regeneration data and simulates the closed loop.

Exit status: 0 success, 2 empty region or failed design check, 1 error.
"""

import argparse
import dataclasses
import io
import json
import logging
import math
import os
import sys
from datetime import datetime
from functools import partial

import numpy as np
from dotenv import load_dotenv

import plots
from design_config import config_hash, load_config
from errors import DesignError, InvalidParameter, UnstableSimulation
from freqresp import bode_grid
from regions import (
    FORMATS,
    STRATEGIES,
    ParameterGrid,
    RegionMapper,
    curve_agreement,
    export_region,
    membership_oracle,
    pick_point,
)
from repcon import default_regen_grid, envelopes, regen_check_from_values, regeneration_spectrum
from report_writer import DesignReportWriter
from sim import metrics_to_json, per_period_error_metrics, simulate, sinusoid, triangular_wave

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EMPTY = 2
COMMANDS = ("map", "check", "bode", "regen", "simulate")
BODE_POINTS = 2000


def setup_logging(log_dir="logs", level="INFO"):
    """Setup logging to both file and console"""
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    log_file = os.path.join(log_dir, f'rpmap_{timestamp}.log')

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s: %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ]
    )

    logger = logging.getLogger(__name__)
    logger.info(f"Logging to: {log_file}")
    return logger


def _banner(logger, title):
    logger.info("=" * 70)
    logger.info(title)
    logger.info("=" * 70)


def _write(out_dir, name, payload):
    path = os.path.join(out_dir, name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "wb") as f:
        f.write(payload)
    return path


def _finite(value):
    """JSON-safe copy: non-finite floats become null"""
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _json_bytes(doc):
    return (json.dumps(_finite(doc), sort_keys=True, indent=2) + "\n").encode("utf-8")


def _csv_bytes(columns, header, digest):
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack(columns), fmt="%.17g", delimiter=",",
               header=f"{header}\nconfig_hash={digest}", comments="# ")
    return buf.getvalue().encode("utf-8")


def parse_pair(text, kind=float):
    try:
        a, b = (kind(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return a, b


def apply_overrides(config, raster=None, theta_res=None, dt=None, point=None):
    """Command-line values replace their config counterparts"""
    changes = {}
    if raster is not None:
        changes["raster"] = tuple(raster)
    if theta_res is not None:
        changes["theta_resolution"] = theta_res
    sim = config.simulation
    if dt is not None:
        sim = dataclasses.replace(sim, dt=dt)
    if point is not None:
        sim = dataclasses.replace(sim, point=tuple(point))
    changes["simulation"] = sim
    return dataclasses.replace(config, **changes)


def _regen_grid(config):
    return default_regen_grid(config.controller.tau_d, max(config.schedule.omegas, default=None),
                              config.regen_points)


def _resolve_point(config, out_dir, logger):
    """--point, then simulation.point, then the pick stored by a previous map run"""
    if config.simulation.point is not None:
        return config.simulation.point
    summary = os.path.join(out_dir, "summary.json")
    if os.path.exists(summary):
        with open(summary, "r") as f:
            picks = json.load(f).get("picks", {})
        pick = picks.get(config.pick)
        if pick:
            logger.info(f"Using {config.pick} pick from {summary}")
            return tuple(pick)
    raise InvalidParameter("no design point: pass --point, set simulation.point or run map first")


def cmd_map(config, out_dir, fmt=None, logger=None):
    """
    Map every schedule row, intersect and write region artifacts plus summary.json.

    Returns:
        int: 0 for a nonempty overall region, 2 otherwise
    """
    logger = logger or logging.getLogger(__name__)
    digest = config_hash(config)
    _banner(logger, "ROBUST PERFORMANCE REGION MAP")
    nx, ny = config.raster
    grid = ParameterGrid(config.selection.box, nx, ny)
    mapper = RegionMapper(config.plant, config.controller, config.selection, grid,
                          config.theta_resolution, config.regen_points, logger)
    result = mapper.run(config.schedule, config.check_stability)

    region_formats = [fmt] if fmt else ["json", "svg"]
    for region, stat in zip(result.regions, result.stats):
        stem = f"k{stat['k']:03d}_{region.band}" if stat["k"] is not None else "stab"
        stat["agreement"] = curve_agreement(region)
        for f in region_formats:
            _write(out_dir, f"regions/{stem}.{f}", export_region(region, f, digest))

    for f in ([fmt] if fmt else FORMATS):
        path = _write(out_dir, f"overall.{f}", export_region(result.overall, f, digest))
        logger.info(f"Wrote {path}")

    stab = next((r for r in result.regions if r.band == "STAB"), None)
    split = mapper.split_region(config.schedule, stab)
    for f in region_formats:
        _write(out_dir, f"split.{f}", export_region(split, f, digest))

    picks = {}
    if result.overall.nonempty:
        for strategy in STRATEGIES:
            picks[strategy] = list(pick_point(result.overall, strategy))
            logger.info(f"{strategy} pick: p1={picks[strategy][0]:.6g}, p2={picks[strategy][1]:.6g}")

    empty = [s for s in result.stats if s["cells"] == 0]
    summary = {
        "config_hash": digest,
        "nonempty": result.overall.nonempty,
        "overall_cells": result.overall.count,
        "split_cells": split.count,
        "raster": [nx, ny],
        "frequencies": result.stats,
        "empty_rows": [{"k": s["k"], "omega": s["omega"], "band": s["band"]} for s in empty],
        "picks": picks,
    }
    _write(out_dir, "summary.json", _json_bytes(summary))

    if not result.overall.nonempty:
        for s in empty:
            label = f"k={s['k']} ({s['omega'] / (2 * math.pi):.6g} Hz)" if s["k"] else "regeneration"
            logger.warning(f"No solution points for {s['band']} row {label}")
        logger.warning("Overall solution region is EMPTY")
        return EXIT_EMPTY
    return EXIT_OK


def cmd_check(config, point, out_dir, logger=None):
    """
    Membership verdict per row, dense-grid |S|/|T|/R envelopes and the regeneration check.

    Returns:
        int: 0 when every row and the regeneration check pass, 2 otherwise
    """
    logger = logger or logging.getLogger(__name__)
    digest = config_hash(config)
    _banner(logger, f"DESIGN CHECK AT p1={point[0]:.6g}, p2={point[1]:.6g}")
    report = membership_oracle(point, config.plant, config.controller, config.selection,
                               config.schedule, config.check_stability, _regen_grid(config), logger)
    for row in report.rows:
        mark = "✓" if row.passed else "✗"
        logger.info(f"{mark} k={row.k:>3} {row.band}: {row.value:.6g} {row.diagnostic}")

    ctrl = config.selection.controller_at(config.controller, *point)
    env = envelopes(config.plant, ctrl, _regen_grid(config))
    _write(out_dir, "envelopes.csv",
           _csv_bytes([env["omega"], env["abs_S"], env["abs_T"], env["regen"]],
                      "omega,abs_S,abs_T,regen", digest))
    _write(out_dir, "envelopes.svg", plots.envelope_svg(env, digest))

    doc = {
        "config_hash": digest,
        "point": list(point),
        "verdict": report.verdict,
        "rows": [dataclasses.asdict(row) for row in report.rows],
        "regen": report.regen,
    }
    _write(out_dir, "check.json", _json_bytes(doc))

    writer = DesignReportWriter(os.path.join(out_dir, "report.xlsx"), digest)
    writer.add_schedule_sheet(point, report)
    if report.regen:
        writer.add_regen_sheet(report.regen)
    writer.save()

    logger.info(f"{'✓' if report.verdict else '✗'} Verdict: {'PASS' if report.verdict else 'FAIL'}")
    return EXIT_OK if report.verdict else EXIT_EMPTY


def cmd_bode(config, out_dir, logger=None):
    logger = logger or logging.getLogger(__name__)
    digest = config_hash(config)
    _banner(logger, "PLANT BODE DATA")
    omega_1 = 2.0 * math.pi / config.controller.tau_d
    omega_last = max(config.schedule.omegas, default=omega_1)
    omegas = np.logspace(math.log10(omega_1 / 10.0), math.log10(4.0 * omega_last), BODE_POINTS)
    points = bode_grid(config.plant, omegas)
    _write(out_dir, "bode.csv", _csv_bytes(
        [[p.omega for p in points], [p.omega / (2 * math.pi) for p in points],
         [p.magnitude for p in points], [p.phase for p in points]],
        "omega,freq_hz,magnitude,phase", digest))
    _write(out_dir, "bode.svg", plots.bode_svg(points, digest))
    logger.info(f"Wrote {len(points)} Bode points")
    return EXIT_OK


def cmd_regen(config, point, out_dir, logger=None):
    """
    Regeneration spectrum over the dense grid at a point (or the template controller).

    Returns:
        int: 0 when R stays below 1 - epsilon, 2 otherwise
    """
    logger = logger or logging.getLogger(__name__)
    digest = config_hash(config)
    _banner(logger, "REGENERATION SPECTRUM")
    ctrl = config.controller
    if point is not None:
        ctrl = config.selection.controller_at(ctrl, *point)
    omegas = _regen_grid(config)
    values = [regeneration_spectrum(config.plant, ctrl, w) for w in omegas]
    check = regen_check_from_values(omegas, values, config.schedule.epsilon)
    _write(out_dir, "regen.csv", _csv_bytes([omegas, values], "omega,regen", digest))
    _write(out_dir, "regen.svg", plots.regen_svg(omegas, values, config.schedule.epsilon, digest))
    _write(out_dir, "regen.json", _json_bytes({
        "config_hash": digest,
        "point": list(point) if point is not None else None,
        **dataclasses.asdict(check),
        "margin": check.margin,
    }))
    logger.info(f"{'✓' if check.passed else '✗'} worst R={check.worst_value:.6g} at "
                f"{check.worst_omega / (2 * math.pi):.6g} Hz, margin {check.margin:.4g}")
    return EXIT_OK if check.passed else EXIT_EMPTY


def _reference(config):
    sim = config.simulation
    if sim.reference == "sine":
        frequency = sim.frequency_hz or 1.0 / config.controller.tau_d
        return partial(sinusoid, sim.amplitude, 2.0 * math.pi * frequency)
    return partial(triangular_wave, sim.amplitude, config.controller.tau_d)


def cmd_simulate(config, point, out_dir, logger=None):
    """
    Closed-loop run at a point next to the same run with the repetitive loop off.

    Returns:
        int: 0 on success
    """
    logger = logger or logging.getLogger(__name__)
    digest = config_hash(config)
    sim = config.simulation
    _banner(logger, f"SIMULATION AT p1={point[0]:.6g}, p2={point[1]:.6g}")
    ctrl = config.selection.controller_at(config.controller, *point)
    duration = sim.periods * ctrl.tau_d
    reference = _reference(config)

    try:
        trace = simulate(config.plant, ctrl, reference, duration, sim.dt, logger)
    except UnstableSimulation as e:
        if e.trace is not None:
            _write(out_dir, "trace.csv", e.trace.to_csv(digest))
        raise
    baseline = simulate(config.plant, ctrl.disabled(), reference, duration, sim.dt, logger)

    metrics = per_period_error_metrics(trace, ctrl.tau_d)
    base_metrics = per_period_error_metrics(baseline, ctrl.tau_d)
    reduction = base_metrics[-1].peak_error / metrics[-1].peak_error if metrics[-1].peak_error else math.inf
    _write(out_dir, "trace.csv", trace.to_csv(digest))
    _write(out_dir, "trace.svg", plots.trace_svg(trace, digest))
    _write(out_dir, "metrics.json", metrics_to_json(metrics, digest, _finite({
        "point": list(point),
        "dt": trace.dt,
        "baseline_periods": [dataclasses.asdict(m) for m in base_metrics],
        "peak_reduction": reduction,
    })))

    writer = DesignReportWriter(os.path.join(out_dir, "report.xlsx"), digest)
    writer.add_period_sheet(metrics, base_metrics)
    writer.save()

    logger.info(f"Peak error: first period {metrics[0].peak_error:.4g}, "
                f"last period {metrics[-1].peak_error:.4g}, "
                f"q_p = 0 baseline {base_metrics[-1].peak_error:.4g} ({reduction:.3g}x)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(description="Repetitive-control robust performance mapper")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default="config.yaml", help="Design config (YAML or JSON)")
    parser.add_argument("--out", default="out", help="Artifact directory")
    parser.add_argument("--point", type=parse_pair, help="Design point P1,P2")
    parser.add_argument("--raster", type=partial(parse_pair, kind=int), help="Raster resolution NX,NY")
    parser.add_argument("--theta-res", type=int, help="Theta samples per curve")
    parser.add_argument("--dt", type=float, help="Simulation step in seconds")
    parser.add_argument("--format", choices=FORMATS, help="Region artifact format")
    return parser


def main(argv=None):
    """Main entry point"""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # Usage errors map to the generic error status; 2 means an empty region.
        return EXIT_ERROR if e.code else EXIT_OK
    load_dotenv()
    logger = setup_logging(os.getenv("RPMAP_LOG_DIR", "logs"), os.getenv("RPMAP_LOG_LEVEL", "INFO"))

    try:
        config = load_config(args.config)
        config = apply_overrides(config, args.raster, args.theta_res, args.dt, args.point)
        logger.info(f"Config {args.config} ({config_hash(config)[:12]})")
        os.makedirs(args.out, exist_ok=True)

        if args.command == "map":
            return cmd_map(config, args.out, args.format, logger)
        if args.command == "bode":
            return cmd_bode(config, args.out, logger)
        if args.command == "regen":
            return cmd_regen(config, config.simulation.point, args.out, logger)
        point = _resolve_point(config, args.out, logger)
        if args.command == "check":
            return cmd_check(config, point, args.out, logger)
        return cmd_simulate(config, point, args.out, logger)
    except DesignError as e:
        logger.error(f"✗ {args.command} failed: {e}")
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"✗ {args.command} failed: {e}")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
