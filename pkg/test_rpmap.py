import json
import logging
import os

import numpy as np
import pytest
import yaml
from openpyxl import load_workbook

import rpmap
from design_config import load_config
from regions import decode_rle

ROOT = os.path.dirname(os.path.abspath(__file__))
MINIMAL = os.path.join(ROOT, "configs", "minimal.yaml")
LOGGER = logging.getLogger("test_rpmap")


def variant(tmp_path, name, edit):
    """Minimal config with edit(doc) applied, written next to the test outputs"""
    with open(MINIMAL, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    edit(doc)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return str(path)


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


@pytest.fixture
def log_dir(tmp_path, monkeypatch):
    path = tmp_path / "logs"
    monkeypatch.setenv("RPMAP_LOG_DIR", str(path))
    return path


class TestMap:
    def test_minimal_region_is_nonempty(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        assert rpmap.cmd_map(minimal_config, out, logger=LOGGER) == rpmap.EXIT_OK
        summary = read_json(os.path.join(out, "summary.json"))
        assert summary["nonempty"]
        assert summary["overall_cells"] == 32 * 32
        assert summary["empty_rows"] == []
        assert set(summary["picks"]) == {"centroid", "max-clearance"}
        for fmt in ("json", "csv", "svg"):
            assert os.path.exists(os.path.join(out, f"overall.{fmt}"))
        assert os.path.exists(os.path.join(out, "regions", "k001_NP.json"))
        assert os.path.exists(os.path.join(out, "regions", "stab.svg"))
        assert summary["split_cells"] == summary["overall_cells"]
        assert os.path.exists(os.path.join(out, "split.json"))

    def test_split_region_contains_the_robust_region(self, tmp_path):
        def edit(doc):
            doc["schedule"]["rows"] = [{"k": 1, "ws": 1.5, "wt": 0.3, "band": "RP"}]

        config = load_config(variant(tmp_path, "robust.yaml", edit))
        out = str(tmp_path / "out")
        rpmap.cmd_map(config, out, logger=LOGGER)
        overall = read_json(os.path.join(out, "overall.json"))
        split = read_json(os.path.join(out, "split.json"))
        assert os.path.exists(os.path.join(out, "split.svg"))
        assert [c["band"] for c in split["contributing"]] == ["NP", "RS", "STAB"]
        robust = decode_rle(overall["rows"], 32, 32)
        separate = decode_rle(split["rows"], 32, 32)
        assert not np.any(robust & ~separate)
        summary = read_json(os.path.join(out, "summary.json"))
        assert summary["split_cells"] == split["true_count"] >= summary["overall_cells"]

    def test_unreachable_weight_gives_empty_status(self, tmp_path):
        def edit(doc):
            doc["schedule"]["rows"][0]["ws"] = 1.0e9

        config = load_config(variant(tmp_path, "tight.yaml", edit))
        out = str(tmp_path / "out")
        assert rpmap.cmd_map(config, out, logger=LOGGER) == rpmap.EXIT_EMPTY
        summary = read_json(os.path.join(out, "summary.json"))
        assert not summary["nonempty"]
        assert [row["k"] for row in summary["empty_rows"]] == [1]
        assert summary["picks"] == {}

    def test_no_constraints_is_full_box(self, tmp_path):
        def edit(doc):
            doc["schedule"] = {"rows": [], "stability": False}

        config = load_config(variant(tmp_path, "open.yaml", edit))
        out = str(tmp_path / "out")
        assert rpmap.cmd_map(config, out, logger=LOGGER) == rpmap.EXIT_OK
        assert read_json(os.path.join(out, "summary.json"))["overall_cells"] == 32 * 32

    def test_artifacts_are_byte_identical_across_runs(self, tmp_path, minimal_config):
        first, second = str(tmp_path / "a"), str(tmp_path / "b")
        rpmap.cmd_map(minimal_config, first, logger=LOGGER)
        rpmap.cmd_map(minimal_config, second, logger=LOGGER)
        for name in ("summary.json", "overall.json", "overall.csv", "overall.svg"):
            assert read_bytes(os.path.join(first, name)) == read_bytes(os.path.join(second, name))

    def test_single_format(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        rpmap.cmd_map(minimal_config, out, "csv", LOGGER)
        assert os.path.exists(os.path.join(out, "overall.csv"))
        assert not os.path.exists(os.path.join(out, "overall.svg"))


class TestCheckAndSpectra:
    def test_check_passes_inside_region(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        assert rpmap.cmd_check(minimal_config, (0.5, 0.5), out, LOGGER) == rpmap.EXIT_OK
        doc = read_json(os.path.join(out, "check.json"))
        assert doc["verdict"]
        assert [row["k"] for row in doc["rows"]] == [1]
        header = read_bytes(os.path.join(out, "envelopes.csv")).decode("utf-8").splitlines()[0]
        assert header == "# omega,abs_S,abs_T,regen"

        wb = load_workbook(os.path.join(out, "report.xlsx"))
        assert wb.sheetnames == ["Schedule", "Regeneration"]
        ws = wb["Schedule"]
        assert ws["A1"].value == "DESIGN CHECK"
        assert ws.cell(row=6, column=5).value == "PASS"

    def test_check_fails_on_unreachable_weight(self, tmp_path):
        def edit(doc):
            doc["schedule"]["rows"][0]["ws"] = 1.0e9

        config = load_config(variant(tmp_path, "tight.yaml", edit))
        assert rpmap.cmd_check(config, (0.5, 0.5), str(tmp_path / "out"), LOGGER) == rpmap.EXIT_EMPTY

    def test_bode(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        assert rpmap.cmd_bode(minimal_config, out, LOGGER) == rpmap.EXIT_OK
        lines = read_bytes(os.path.join(out, "bode.csv")).decode("utf-8").splitlines()
        assert lines[0] == "# omega,freq_hz,magnitude,phase"
        assert len(lines) == 2 + rpmap.BODE_POINTS
        assert lines[2].split(",")[2] == "1"

    def test_regen_of_template_controller(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        assert rpmap.cmd_regen(minimal_config, None, out, LOGGER) == rpmap.EXIT_OK
        doc = read_json(os.path.join(out, "regen.json"))
        # q = 0.5 against a unity plant: R = |0.5 (1 - 1/2)|
        assert doc["worst_value"] == pytest.approx(0.25)
        assert doc["passed"]
        assert doc["point"] is None

    def test_regen_evaluates_the_spectrum_once(self, tmp_path, minimal_config, monkeypatch):
        calls = []
        spectrum = rpmap.regeneration_spectrum

        def counted(plant, ctrl, omega):
            calls.append(omega)
            return spectrum(plant, ctrl, omega)

        monkeypatch.setattr(rpmap, "regeneration_spectrum", counted)
        out = str(tmp_path / "out")
        rpmap.cmd_regen(minimal_config, None, out, LOGGER)
        omegas = list(rpmap._regen_grid(minimal_config))
        assert calls == omegas
        doc = read_json(os.path.join(out, "regen.json"))
        assert doc["worst_omega"] in omegas


class TestSimulate:
    def test_simulate_writes_trace_and_metrics(self, tmp_path, minimal_config):
        config = rpmap.apply_overrides(minimal_config, dt=1e-2)
        out = str(tmp_path / "out")
        assert rpmap.cmd_simulate(config, (0.5, 0.5), out, LOGGER) == rpmap.EXIT_OK
        metrics = read_json(os.path.join(out, "metrics.json"))
        assert len(metrics["periods"]) == 20
        assert len(metrics["baseline_periods"]) == 20
        assert metrics["dt"] == pytest.approx(1e-2)
        header = read_bytes(os.path.join(out, "trace.csv")).decode("utf-8").splitlines()[0]
        assert header == "# t,reference,output,error,control"
        wb = load_workbook(os.path.join(out, "report.xlsx"))
        assert wb.sheetnames == ["Period Metrics"]

    def test_point_taken_from_previous_map(self, tmp_path, minimal_config):
        out = str(tmp_path / "out")
        rpmap.cmd_map(minimal_config, out, logger=LOGGER)
        picked = read_json(os.path.join(out, "summary.json"))["picks"]["max-clearance"]
        assert rpmap._resolve_point(minimal_config, out, LOGGER) == tuple(picked)


class TestMain:
    def test_map_then_simulate(self, tmp_path, log_dir):
        out = str(tmp_path / "out")
        assert rpmap.main(["map", "--config", MINIMAL, "--out", out, "--raster", "16,16"]) == 0
        assert read_json(os.path.join(out, "summary.json"))["raster"] == [16, 16]
        assert rpmap.main(["simulate", "--config", MINIMAL, "--out", out, "--dt", "0.01"]) == 0
        assert log_dir.is_dir()

    def test_missing_point(self, tmp_path, log_dir):
        out = str(tmp_path / "out")
        assert rpmap.main(["check", "--config", MINIMAL, "--out", out]) == rpmap.EXIT_ERROR

    def test_bad_config(self, tmp_path, log_dir):
        path = tmp_path / "bad.yaml"
        path.write_text("plant: [1.0\n", encoding="utf-8")
        assert rpmap.main(["map", "--config", str(path), "--out", str(tmp_path)]) == rpmap.EXIT_ERROR

    def test_usage_error(self, log_dir):
        assert rpmap.main(["paint"]) == rpmap.EXIT_ERROR
        assert rpmap.main(["check", "--point", "1"]) == rpmap.EXIT_ERROR

    def test_empty_region_status(self, tmp_path, log_dir):
        def edit(doc):
            doc["schedule"]["rows"][0]["ws"] = 1.0e9

        config = variant(tmp_path, "tight.yaml", edit)
        assert rpmap.main(["map", "--config", config, "--out", str(tmp_path / "out")]) == rpmap.EXIT_EMPTY
