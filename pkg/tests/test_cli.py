from __future__ import annotations

import csv
import json

import pytest
from click.testing import CliRunner

from netflow.cli import EXIT_INPUT, EXIT_USAGE, RunConfig, main
from netflow.network import dump_network, load_network
from netflow.flow import straight_network


@pytest.fixture
def runner():
    return CliRunner()


def test_check_regular_triod(runner):
    res = runner.invoke(main, ["check", "fixture:triod"])
    assert res.exit_code == 0
    assert res.output.splitlines()[0] == "regular"


def test_check_cross_names_vertex(runner):
    res = runner.invoke(main, ["check", "fixture:cross"])
    assert res.exit_code == 0
    assert "irregular: v1" in res.output


def test_check_reads_json(runner, tmp_path):
    path = tmp_path / "net.json"
    dump_network(straight_network((0.0, 0.0), [(1.0, 0.0), (-0.5, 0.8), (-0.5, -0.8)], 9), path)
    res = runner.invoke(main, ["check", str(path)])
    assert res.exit_code == 0


def test_missing_file_is_input_error(runner, tmp_path):
    res = runner.invoke(main, ["check", str(tmp_path / "absent.json")])
    assert res.exit_code == EXIT_INPUT


def test_heatmodel_order_12(runner, tmp_path):
    res = runner.invoke(main, ["heatmodel", "--order", "12", "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert "c/A consistency: PASS" in res.output
    rows = list(csv.DictReader(open(tmp_path / "coefficients.csv")))
    assert {r["table"] for r in rows} == {"c", "A"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["J"] == 12
    assert manifest["version"].startswith("v")


def _evolve(runner, out, *extra):
    args = ["evolve", "fixture:cross", "--topology", "v1:12|34", "--t-end", "0.02", "--mesh", "32",
            "--snapshots", "0.01", "--out", str(out), *extra]
    return runner.invoke(main, args)


@pytest.fixture(scope="module")
def cross_runs(tmp_path_factory):
    runner = CliRunner()
    outs = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    results = [_evolve(runner, out) for out in outs]
    return outs, results


def test_evolve_cross_has_five_curves(cross_runs):
    (out, _), (res, _) = cross_runs
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(out / "trajectory.csv")))
    last = max(float(r["t"]) for r in rows)
    assert last == pytest.approx(0.02)
    assert {int(r["curve"]) for r in rows if float(r["t"]) == last} == set(range(5))


def test_evolve_is_deterministic(cross_runs):
    (a, b), _ = cross_runs
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_manifest_records_parameters(cross_runs):
    (out, _), _ = cross_runs
    doc = json.loads((out / "manifest.json").read_text())
    cfg = doc["config"]
    for key in ("t0", "dt", "t_end", "mesh", "radius", "cfl", "snapshots", "seed", "topology", "J"):
        assert key in cfg
    assert cfg["topology"] == {"0": "12|34"}
    assert doc["audits"]["passed"] and doc["audits"]["curves"] == 5
    assert doc["startup"]["predicted_curves"] == 5


def test_irregular_input_needs_topology(runner, tmp_path):
    res = runner.invoke(main, ["evolve", "fixture:cross", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_USAGE
    assert "--topology" in res.output


def test_bad_topology_syntax(runner, tmp_path):
    res = runner.invoke(main, ["evolve", "fixture:cross", "--topology", "12|34", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_USAGE


def test_nonpositive_step_rejected(runner, tmp_path):
    res = runner.invoke(main, ["evolve", "fixture:triod", "--dt", "0", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_USAGE


def test_config_file_supplies_defaults(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"t_end": 0.005, "mesh": 16, "out": str(tmp_path / "o")}))
    res = runner.invoke(main, ["--config", str(cfg), "evolve", "fixture:triod", "--dt", "1e-3"])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert doc["config"]["t_end"] == 0.005 and doc["config"]["mesh"] == 16


def test_svg_frames(runner, tmp_path):
    res = runner.invoke(main, ["evolve", "fixture:triod", "--t-end", "0.004", "--snapshots", "0.002",
                               "--mesh", "8", "--emit-svg", "--out", str(tmp_path)])
    assert res.exit_code == 0
    frames = sorted(tmp_path.glob("frame_*.svg"))
    assert len(frames) == 3
    boxes = {f.read_text().split('viewBox="')[1].split('"')[0] for f in frames}
    assert len(boxes) == 1


def test_resolve_writes_network(runner, tmp_path):
    res = runner.invoke(main, ["resolve", "fixture:cross", "--topology", "v1:23|41", "--mesh", "32",
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert len(load_network(tmp_path / "resolved.json").curves) == 5


def test_run_config_round_trip():
    cfg = RunConfig("evolve", "fixture:cross", {0: "12|34", 3: "123"}, t0=0.002, radius=0.1,
                    snapshots=[0.01, 0.02], emit_svg=True, workers=3)
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_help_documents_exit_codes(runner):
    res = runner.invoke(main, ["evolve", "--help"])
    assert res.exit_code == 0
    for code in range(7):
        assert f"{code} " in res.output
