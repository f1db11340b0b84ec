"""
Design configuration: YAML (or JSON) file -> validated DesignConfig.
Validation errors name the offending field path and, where the parser can
tell, its line in the file.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from errors import ConfigError, DesignError, ParseError, ValidationError
from freqresp import CONTROLLER_TABLE, BiquadSection, TransferFunction, make_controller_tf
from pointcond import DEFAULT_THETA_RESOLUTION, FILTERS, ParameterBox, ParameterSelection
from regions import DEFAULT_RASTER, DEFAULT_REGEN_POINTS, STRATEGIES
from repcon import BANDS, DEFAULT_EPSILON, RepetitiveController, WeightSchedule

SCHEMA_VERSION = 1
REFERENCES = ("triangular", "sine")


@dataclass(frozen=True)
class SimulationSettings:
    dt: float = None
    periods: int = 20
    amplitude: float = 1.0
    reference: str = "triangular"
    frequency_hz: float = None
    point: tuple = None


@dataclass(frozen=True)
class DesignConfig:
    plant: TransferFunction
    controller: RepetitiveController
    selection: ParameterSelection
    schedule: WeightSchedule
    check_stability: bool = True
    pick: str = "max-clearance"
    raster: tuple = DEFAULT_RASTER
    theta_resolution: int = DEFAULT_THETA_RESOLUTION
    regen_points: int = DEFAULT_REGEN_POINTS
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    source: str = None


class _Reader:
    """Typed access to the parsed document with path-qualified errors"""

    def __init__(self, lines, source):
        self.lines = lines
        self.source = source

    def fail(self, path, message):
        # Fall back to the nearest enclosing field that has a known line.
        probe = path
        while probe and probe not in self.lines:
            cut = max(probe.rfind("."), probe.rfind("["))
            probe = probe[:cut] if cut > 0 else ""
        raise ValidationError(f"{path}: {message}", self.source, self.lines.get(probe))

    def mapping(self, doc, key, path, required=True):
        value = doc.get(key) if isinstance(doc, dict) else None
        if value is None:
            if required:
                self.fail(path, "missing section")
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        return value

    def number(self, doc, key, path, default=None, required=False):
        value = doc.get(key, default)
        if value is None:
            if required:
                self.fail(path, "required value missing")
            return None
        if isinstance(value, str):
            # PyYAML reads exponent literals such as 1e12 as strings
            try:
                value = float(value)
            except ValueError:
                self.fail(path, f"expected a number, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        return float(value)

    def integer(self, doc, key, path, default=None):
        value = doc.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        return value

    def pair(self, doc, key, path, default=None, kind=float):
        value = doc.get(key, default)
        if value is None:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            self.fail(path, "expected a two-element list")
        try:
            return tuple(kind(v) for v in value)
        except (TypeError, ValueError):
            self.fail(path, f"expected two {kind.__name__} values")


def _line_index(node, prefix="", index=None):
    """Map dotted field paths to 1-based line numbers of a composed YAML node"""
    index = {} if index is None else index
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)
    return index


def _parse_plant(reader, doc):
    path = "plant"
    plant = reader.mapping(doc, "plant", path)
    delay = reader.number(plant, "delay", f"{path}.delay", 0.0)
    form = plant.get("form", "polynomial")
    try:
        if form == "resonant":
            gain = reader.number(plant, "gain", f"{path}.gain", required=True)
            modes = {}
            for key in ("zeros", "poles"):
                entries = plant.get(key, [])
                if not isinstance(entries, list):
                    reader.fail(f"{path}.{key}", "expected a list of modes")
                modes[key] = [
                    (reader.number(m, "freq_hz", f"{path}.{key}[{i}].freq_hz", required=True),
                     reader.number(m, "zeta", f"{path}.{key}[{i}].zeta", required=True))
                    for i, m in enumerate(entries)
                ]
            return TransferFunction.from_resonant_modes(gain, modes["zeros"], modes["poles"], delay)
        if form != "polynomial":
            reader.fail(f"{path}.form", f"expected 'polynomial' or 'resonant', got {form!r}")
        coeffs = {}
        for key in ("num", "den"):
            value = plant.get(key)
            if not isinstance(value, list) or not value:
                reader.fail(f"{path}.{key}", "expected a non-empty coefficient list")
            coeffs[key] = [reader.number({"c": c}, "c", f"{path}.{key}[{i}]") for i, c in enumerate(value)]
        return TransferFunction(tuple(coeffs["num"]), tuple(coeffs["den"]), delay)
    except ConfigError:
        raise
    except DesignError as e:
        reader.fail(path, str(e))


def _parse_section(reader, entry, path):
    if not isinstance(entry, dict):
        reader.fail(path, "expected a mapping")
    try:
        if "kind" in entry:
            kind = entry["kind"]
            params = {k: v for k, v in entry.items() if k != "kind"}
            for name, value in params.items():
                reader.number(params, name, f"{path}.{name}")
            return make_controller_tf(kind, **params)
        unknown = set(entry) - set(BiquadSection.SLOTS)
        if unknown:
            reader.fail(path, f"unknown coefficient slots {sorted(unknown)}; known kinds {sorted(CONTROLLER_TABLE)}")
        values = {slot: reader.number(entry, slot, f"{path}.{slot}", 0.0) for slot in BiquadSection.SLOTS if slot in entry}
        return BiquadSection(**values)
    except ConfigError:
        raise
    except DesignError as e:
        reader.fail(path, str(e))


def _parse_controller(reader, doc):
    path = "controller"
    ctrl = reader.mapping(doc, "controller", path)
    tau_d = reader.number(ctrl, "tau_d", f"{path}.tau_d", required=True)
    tau_q = reader.number(ctrl, "tau_q", f"{path}.tau_q", 0.0)
    tau_b = reader.number(ctrl, "tau_b", f"{path}.tau_b", 0.0)
    chains = {}
    for key, default in (("q_p", [{"n0": 1.0}]), ("b_p", [])):
        entries = ctrl.get(key, default)
        if not isinstance(entries, list):
            reader.fail(f"{path}.{key}", "expected a list of sections")
        chains[key] = tuple(_parse_section(reader, e, f"{path}.{key}[{i}]") for i, e in enumerate(entries))
    if not tau_d > 0:
        reader.fail(f"{path}.tau_d", "must be positive")
    if tau_q < 0:
        reader.fail(f"{path}.tau_q", "must be non-negative")
    if tau_b < 0:
        reader.fail(f"{path}.tau_b", "must be non-negative")
    if not tau_d > tau_q + tau_b:
        reader.fail(f"{path}.tau_q", f"tau_q + tau_b must stay below tau_d ({tau_q} + {tau_b} >= {tau_d})")
    try:
        return RepetitiveController(tau_d, tau_q, tau_b, chains["q_p"], chains["b_p"])
    except DesignError as e:
        reader.fail(path, str(e))


def _parse_selection(reader, doc, ctrl):
    path = "selection"
    sel = reader.mapping(doc, "selection", path)
    target = sel.get("filter", "q_p")
    if target not in FILTERS:
        reader.fail(f"{path}.filter", f"expected one of {FILTERS}")
    index = reader.integer(sel, "section", f"{path}.section", 0)
    free = sel.get("free")
    if not isinstance(free, list) or len(free) != 2:
        reader.fail(f"{path}.free", "expected two coefficient slot names")
    tie = sel.get("tie")
    if tie is not None and (not isinstance(tie, list) or len(tie) != 2):
        reader.fail(f"{path}.tie", "expected [slave, master]")
    box = reader.mapping(sel, "box", f"{path}.box")
    p1 = reader.pair(box, "p1", f"{path}.box.p1")
    p2 = reader.pair(box, "p2", f"{path}.box.p2")
    if p1 is None or p2 is None:
        reader.fail(f"{path}.box", "p1 and p2 ranges are required")
    log = reader.pair(sel, "log", f"{path}.log", [False, False], bool)
    clip = sel.get("clip_to_box", False)
    if not isinstance(clip, bool):
        reader.fail(f"{path}.clip_to_box", "expected true or false")
    try:
        box = ParameterBox(p1[0], p1[1], p2[0], p2[1], log[0], log[1])
        selection = ParameterSelection(target, index, tuple(free), box, tie, clip)
        selection.section(ctrl)
    except DesignError as e:
        reader.fail(path, str(e))
    pick = sel.get("pick", "max-clearance")
    if pick not in STRATEGIES:
        reader.fail(f"{path}.pick", f"expected one of {STRATEGIES}")
    return selection, pick


def _parse_schedule(reader, doc, tau_d):
    path = "schedule"
    sched = reader.mapping(doc, "schedule", path, required=False)
    epsilon = reader.number(sched, "epsilon", f"{path}.epsilon", DEFAULT_EPSILON)
    if not 0.0 < epsilon < 1.0:
        reader.fail(f"{path}.epsilon", "must lie in (0, 1)")
    stability = sched.get("stability", True)
    if not isinstance(stability, bool):
        reader.fail(f"{path}.stability", "expected true or false")
    rows = sched.get("rows", [])
    if not isinstance(rows, list):
        reader.fail(f"{path}.rows", "expected a list")
    table = []
    previous = 0
    for i, row in enumerate(rows):
        where = f"{path}.rows[{i}]"
        if not isinstance(row, dict):
            reader.fail(where, "expected a mapping with k, ws, wt, band")
        if "omega" in row:
            reader.fail(f"{where}.omega", "omega is derived from k and tau_d; remove it")
        k = reader.integer(row, "k", f"{where}.k")
        ws = reader.number(row, "ws", f"{where}.ws", 0.0)
        wt = reader.number(row, "wt", f"{where}.wt", 0.0)
        band = row.get("band")
        if k < 1:
            reader.fail(f"{where}.k", "harmonic index must be >= 1")
        if k <= previous:
            reader.fail(f"{where}.k", "harmonics must be strictly increasing")
        if band not in BANDS:
            reader.fail(f"{where}.band", f"expected one of {BANDS}")
        if ws < 0:
            reader.fail(f"{where}.ws", "must be non-negative")
        if wt < 0:
            reader.fail(f"{where}.wt", "must be non-negative")
        if band == "NP" and wt != 0:
            reader.fail(f"{where}.wt", "NP rows require wt = 0")
        if band == "RS" and ws != 0:
            reader.fail(f"{where}.ws", "RS rows require ws = 0")
        previous = k
        table.append((k, ws, wt, band))
    try:
        return WeightSchedule.from_table(tau_d, table, epsilon), stability
    except DesignError as e:
        reader.fail(path, str(e))


def _parse_resolution(reader, doc):
    path = "resolution"
    res = reader.mapping(doc, "resolution", path, required=False)
    raster = reader.pair(res, "raster", f"{path}.raster", list(DEFAULT_RASTER), int)
    if min(raster) < 1:
        reader.fail(f"{path}.raster", "must be positive")
    theta = reader.integer(res, "theta", f"{path}.theta", DEFAULT_THETA_RESOLUTION)
    if theta < 16:
        reader.fail(f"{path}.theta", "must be at least 16")
    regen = reader.integer(res, "regen_points", f"{path}.regen_points", DEFAULT_REGEN_POINTS)
    if regen < 1:
        reader.fail(f"{path}.regen_points", "must be positive")
    return raster, theta, regen


def _parse_simulation(reader, doc):
    path = "simulation"
    sim = reader.mapping(doc, "simulation", path, required=False)
    dt = reader.number(sim, "dt", f"{path}.dt")
    if dt is not None and not dt > 0:
        reader.fail(f"{path}.dt", "must be positive")
    periods = reader.integer(sim, "periods", f"{path}.periods", 20)
    if periods < 2:
        reader.fail(f"{path}.periods", "at least two periods are simulated")
    amplitude = reader.number(sim, "amplitude", f"{path}.amplitude", 1.0)
    reference = sim.get("reference", "triangular")
    if reference not in REFERENCES:
        reader.fail(f"{path}.reference", f"expected one of {REFERENCES}")
    frequency = reader.number(sim, "frequency_hz", f"{path}.frequency_hz")
    if frequency is not None and not frequency > 0:
        reader.fail(f"{path}.frequency_hz", "must be positive")
    point = reader.pair(sim, "point", f"{path}.point")
    return SimulationSettings(dt, periods, amplitude, reference, frequency, point)


def build_config(doc, source=None, lines=None):
    """
    Validate a parsed config document.

    Args:
        doc (dict): Parsed YAML/JSON document
        source (str, optional): File name used in error messages
        lines (dict, optional): Field path -> line number

    Returns:
        DesignConfig

    Raises:
        ValidationError: Any invariant violated
    """
    reader = _Reader(lines or {}, source)
    if not isinstance(doc, dict):
        reader.fail("<root>", "config must be a mapping")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        reader.fail("schema_version", f"unsupported schema version {version!r}")

    plant = _parse_plant(reader, doc)
    ctrl = _parse_controller(reader, doc)
    selection, pick = _parse_selection(reader, doc, ctrl)
    schedule, stability = _parse_schedule(reader, doc, ctrl.tau_d)
    raster, theta, regen = _parse_resolution(reader, doc)
    simulation = _parse_simulation(reader, doc)
    if simulation.point is not None and not selection.box.contains(*simulation.point):
        reader.fail("simulation.point", "lies outside selection.box")
    return DesignConfig(plant, ctrl, selection, schedule, stability, pick, raster,
                        theta, regen, simulation, source)


def load_config(path):
    """
    Load and validate a design config.

    Args:
        path (str): YAML or JSON file

    Returns:
        DesignConfig

    Raises:
        ParseError: Malformed file
        ValidationError: Invalid content
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", str(path)) from e
    try:
        doc = yaml.safe_load(text)
        lines = _line_index(yaml.compose(text)) if doc is not None else {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ParseError(f"malformed config: {getattr(e, 'problem', e)}", str(path),
                         mark.line + 1 if mark else None) from e
    return build_config(doc, str(path), lines)


def config_to_dict(config):
    """Validated config back to the file schema, plant and sections in expanded form"""
    sel = config.selection
    box = sel.box
    sim = config.simulation
    return {
        "schema_version": SCHEMA_VERSION,
        "plant": {
            "num": list(config.plant.num),
            "den": list(config.plant.den),
            "delay": config.plant.delay,
        },
        "controller": {
            "tau_d": config.controller.tau_d,
            "tau_q": config.controller.tau_q,
            "tau_b": config.controller.tau_b,
            "q_p": [s.coefficients() for s in config.controller.qp_sections],
            "b_p": [s.coefficients() for s in config.controller.bp_sections],
        },
        "selection": {
            "filter": sel.target_filter,
            "section": sel.section_index,
            "free": list(sel.free_slots),
            "tie": list(sel.tie) if sel.tie else None,
            "box": {"p1": [box.p1_lo, box.p1_hi], "p2": [box.p2_lo, box.p2_hi]},
            "log": [box.p1_log, box.p2_log],
            "clip_to_box": sel.clip_to_box,
            "pick": config.pick,
        },
        "schedule": {
            "epsilon": config.schedule.epsilon,
            "stability": config.check_stability,
            "rows": [
                {"k": k, "ws": ws, "wt": wt, "band": band}
                for k, ws, wt, band in config.schedule.rows()
            ],
        },
        "resolution": {
            "raster": list(config.raster),
            "theta": config.theta_resolution,
            "regen_points": config.regen_points,
        },
        "simulation": {
            "dt": sim.dt,
            "periods": sim.periods,
            "amplitude": sim.amplitude,
            "reference": sim.reference,
            "frequency_hz": sim.frequency_hz,
            "point": list(sim.point) if sim.point else None,
        },
    }


def dump_config(config):
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def config_hash(config):
    """SHA-256 of the canonical JSON form of the validated config"""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
