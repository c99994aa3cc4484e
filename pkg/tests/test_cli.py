import json
import subprocess
import sys

import pytest

from mdimesh.cli import (ALLOCATION_COLUMNS, BLOCK_COLUMNS, COMPENSATION_COLUMNS, DISTANCE_COLUMNS,
                         EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, HOM_COLUMNS, LOCK_COLUMNS,
                         TALLY_COLUMNS, TEETH_COLUMNS, TIMING_COLUMNS, main)
from mdimesh.config import bundled_config_path
from mdimesh.io import read_csv, read_json
from mdimesh.protocol import REPORT_COLUMNS


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_simulate_outputs(tmp_path):
    assert run(tmp_path, "simulate") == EXIT_OK
    doc = read_json(tmp_path / "result.json", "mdimesh.run_result/1")
    assert doc["report"]["key_rate_bps"] == pytest.approx(73.3, rel=0.01)
    assert "perf" not in doc
    rep = read_csv(tmp_path / "key_report.csv", REPORT_COLUMNS)
    assert float(rep[0]["key_rate_bps"]) == doc["report"]["key_rate_bps"]
    tally = read_csv(tmp_path / "tally.csv", TALLY_COLUMNS)
    assert len(tally) == 4 * 4 * 2


def test_simulate_long_accumulation(tmp_path):
    assert run(tmp_path, "simulate", "--override", "run.accumulation_s=10000") == EXIT_OK
    rate = read_json(tmp_path / "result.json")["report"]["key_rate_bps"]
    assert rate == pytest.approx(379, rel=0.01)


def test_simulate_blocks(tmp_path):
    code = run(tmp_path, "simulate", "--override", "run.blocks=2", "--override", "run.accumulation_s=1000")
    assert code == EXIT_OK
    doc = read_json(tmp_path / "result.json", "mdimesh.long_run/1")
    assert len(doc["blocks"]) == 2
    assert len(read_csv(tmp_path / "blocks.csv", BLOCK_COLUMNS)) == 2
    assert read_csv(tmp_path / "compensation.csv", COMPENSATION_COLUMNS)
    assert read_csv(tmp_path / "timing.csv", TIMING_COLUMNS)


def test_monte_carlo_byte_identical(tmp_path):
    args = ["simulate", "--override", "run.mode=monte_carlo", "--override", "run.pulse_budget=100000",
            "--override", "channel.length_a_km=5", "--override", "channel.length_b_km=5",
            "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *args) == EXIT_OK
    assert run(b, *args) == EXIT_OK
    for name in ("result.json", "key_report.csv", "tally.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_hom_scan(tmp_path):
    assert run(tmp_path, "hom-scan") == EXIT_OK
    rows = read_csv(tmp_path / "hom_scan.csv", HOM_COLUMNS)
    assert min(float(r["coincidence_prob"]) for r in rows) < max(float(r["coincidence_prob"]) for r in rows)
    teeth = read_csv(tmp_path / "hom_teeth.csv", TEETH_COLUMNS)
    assert len(teeth) == 201
    summary = read_json(tmp_path / "hom_summary.json", "mdimesh.hom_scan/1")
    assert 0.48 <= summary["visibility"] <= 0.50


def test_keyrate_vs_distance(tmp_path):
    assert run(tmp_path, "keyrate-vs-distance", "--override", "run.distances_km=100 200 300") == EXIT_OK
    rows = read_csv(tmp_path / "keyrate_distance.csv", DISTANCE_COLUMNS)
    assert [float(r["distance_km"]) for r in rows] == [100, 200, 300]
    assert all(float(r["rate_ull_bps"]) >= float(r["rate_standard_bps"]) for r in rows)


def test_lock_sim(tmp_path):
    assert run(tmp_path, "lock-sim", "--override", "run.duration_s=600") == EXIT_OK
    assert read_csv(tmp_path / "lock_trace.csv", LOCK_COLUMNS)
    s = read_json(tmp_path / "lock_summary.json", "mdimesh.lock_summary/1")
    assert s["std_hz"] < s["open_loop_std_hz"]


def test_compensate(tmp_path):
    assert run(tmp_path, "compensate", "--override", "run.duration_s=120") == EXIT_OK
    assert len(read_csv(tmp_path / "compensation.csv", COMPENSATION_COLUMNS)) == 120
    assert read_csv(tmp_path / "timing.csv", TIMING_COLUMNS)
    s = read_json(tmp_path / "compensation_summary.json", "mdimesh.compensation/1")
    assert s["steady_qber_z"] < 0.05


def test_netplan(tmp_path):
    assert run(tmp_path, "netplan") == EXIT_OK
    alloc = json.loads((tmp_path / "allocation.json").read_text())
    assert len(alloc["assignments"]) == 19900
    assert len(read_csv(tmp_path / "allocation.csv", ALLOCATION_COLUMNS)) == 19900
    rep = read_json(tmp_path / "network_report.json", "mdimesh.network_report/1")
    assert rep["min_rate_bps"] == pytest.approx(64 / 100)


def test_netplan_infeasible(tmp_path, capsys):
    assert run(tmp_path, "netplan", "--override", "network.tdm_slots=50") == EXIT_INFEASIBLE
    assert "slots needed: 100" in capsys.readouterr().err


def test_distance_too_long_is_infeasible(tmp_path):
    code = run(tmp_path, "simulate", "--override", "channel.length_a_km=300",
               "--override", "channel.length_b_km=300")
    assert code == EXIT_INFEASIBLE


def test_missing_section_is_config_error(tmp_path, capsys):
    text = bundled_config_path().read_text()
    start = text.index("[decoy]")
    cfg = tmp_path / "broken.ini"
    cfg.write_text(text[:start] + text[text.index("[finite_key]"):])
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_CONFIG
    assert "missing section [decoy]" in capsys.readouterr().err


def test_bad_threads(tmp_path):
    assert run(tmp_path, "simulate", "--threads", "0") == EXIT_CONFIG


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "dry"
    for cmd in ("simulate", "hom-scan", "keyrate-vs-distance", "lock-sim", "compensate", "netplan"):
        assert run(out, cmd, "--dry-run") == EXIT_OK
    assert not out.exists()
    assert "configuration valid" in capsys.readouterr().err


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MDIMESH_OUT", str(tmp_path / "env"))
    assert main(["netplan", "--override", "network.users=5"]) == EXIT_OK
    assert (tmp_path / "env" / "allocation.json").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mdimesh.cli", "--version"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("mdimesh ")
