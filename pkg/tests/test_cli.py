import json

import numpy as np
import pytest

from mdqueue import GridPath
from mdqueue.cli import main


def _write_q(path, n=200):
    t = np.linspace(0.0, 2.0, n + 1)
    GridPath(2.0, 0.3 * t * (2.0 - t)).to_csv(path)


def _cfg(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


BASE = {
    "model": {"sigma": 1.0, "beta": 0.5, "q0": 0.0},
    "dist": {"family": "exponential", "rate": 1.0},
}


def test_rate_zero_path_zero_rate(tmp_path, capsys):
    qp = tmp_path / "q.csv"
    GridPath(2.0, np.zeros(201)).to_csv(qp)
    cfg = _cfg(tmp_path, "c.json", {
        "command": "rate",
        "model": {"sigma": 1.0, "beta": 0.0, "q0": 0.0},
        "dist": {"family": "exponential", "rate": 1.0},
        "io": {"q_csv": "q.csv"},
    })
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 0
    s = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert s["status"] == "ok"
    assert s["rate"] == pytest.approx(0.0, abs=1e-12)
    assert s["version"].startswith("mdqueue-v")


def test_rate_artifacts_roundtrip(tmp_path):
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="rate", io={"q_csv": "q.csv"}))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    # p path CSV round-trips bit-exactly through the GridPath reader
    p1 = GridPath.from_csv(out / "pbar.csv")
    p1.to_csv(out / "pbar2.csv")
    assert (out / "pbar.csv").read_bytes() == (out / "pbar2.csv").read_bytes()
    for f in ("h.csv", "w0dot.csv", "wdot.csv", "kdot.csv", "summary.json"):
        assert (out / f).is_file()


def test_controls_roundtrip_error_reported(tmp_path):
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="controls", io={"q_csv": "q.csv"}))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["roundtrip_rel_error"] <= 0.03
    assert (out / "q_roundtrip.csv").is_file()


def test_oracle_check_report(tmp_path):
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", dict(
        BASE, command="oracle-check",
        grid={"horizon": 2.0, "n_steps": 200, "n_x": 32},
        io={"q_csv": "q.csv"},
    ))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    for key in ("value", "flagsOn", "flagsOff", "fredholmValue", "relGap", "N", "M"):
        assert key in s
    assert s["flagsOn"] >= s["flagsOff"]
    assert s["relGap"] <= 0.02 or abs(s["value"] - s["fredholmValue"]) / (1 + s["fredholmValue"]) <= 0.02


def test_simulate_summary_has_condition_values(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(
        BASE, command="simulate", seed=9,
        sim={"ladder": [10, 100], "b_rule": {"kind": "power", "value": 0.25},
             "reps": 10, "horizon": 1.0},
    ))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    for row in s["ladder"]:
        n, b = row["n"], row["b"]
        assert row["condition_value"] == pytest.approx(b**3 * n ** (1 / b**2 - 0.5))
    assert (out / "trace_n10.csv").is_file()
    assert (out / "ladder.csv").is_file()


def test_identity_check(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(
        BASE, command="identity-check", seed=2,
        sim={"ladder": [10, 100], "b_rule": {"kind": "power", "value": 0.25},
             "reps": 5, "horizon": 1.0, "decomposition_steps": 100},
    ))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["flow_balance_max"] == 0
    assert s["all_within_bound"] is True


def test_kiefer_check(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "kiefer-check", "kiefer": {"m": 128, "n": 128}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["energy_rel_gap"] < 5e-3
    assert s["k_half_T"] == pytest.approx(0.5 * np.log(2.0), abs=1e-3)


def test_dist_info(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "dist-info", "dist": {"family": "erlang", "shape": 2, "rate": 2.0}})
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["mean"] == pytest.approx(1.0)


def test_malformed_json_exit_2_no_outputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    out = tmp_path / "out"
    assert main(["--config", str(bad), "--out", str(out), "--quiet"]) == 2
    assert not out.exists()


def test_unknown_key_exit_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="rate", extra_knob=1))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 2


def test_unknown_command_exit_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="frobnicate"))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 2


def test_missing_q_csv_exit_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="rate", io={"q_csv": "missing.csv"}))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 2


def test_mismatched_q0_exit_2(tmp_path):
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", {
        "command": "rate",
        "model": {"sigma": 1.0, "beta": 0.5, "q0": 0.4},  # q.csv starts at 0
        "dist": {"family": "exponential", "rate": 1.0},
        "io": {"q_csv": "q.csv"},
    })
    assert main(["--config", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 2


def test_numerical_failure_exit_1_with_summary(tmp_path, monkeypatch):
    from mdqueue import cli
    from mdqueue.fredholm import FredholmError

    def boom(*a, **k):
        raise FredholmError("synthetic failure")

    monkeypatch.setattr(cli, "evaluate_rate", boom)
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="rate", io={"q_csv": "q.csv"}))
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 1
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "numerical-failure"
    assert "FredholmError" in s["error"]


def test_seed_flag_overrides_config(tmp_path):
    cfg = _cfg(tmp_path, "c.json", dict(
        BASE, command="simulate", seed=1,
        sim={"ladder": [10], "b_rule": {"kind": "power", "value": 0.25}, "reps": 5, "horizon": 1.0},
    ))
    o1, o2, o3 = (tmp_path / d for d in ("o1", "o2", "o3"))
    assert main(["--config", str(cfg), "--out", str(o1), "--quiet"]) == 0
    assert main(["--config", str(cfg), "--out", str(o2), "--quiet", "--seed", "99"]) == 0
    assert main(["--config", str(cfg), "--out", str(o3), "--quiet", "--seed", "99"]) == 0
    t1 = (o1 / "trace_n10.csv").read_bytes()
    t2 = (o2 / "trace_n10.csv").read_bytes()
    t3 = (o3 / "trace_n10.csv").read_bytes()
    assert t2 != t1
    assert t2 == t3


def test_rerun_byte_identical(tmp_path):
    _write_q(tmp_path / "q.csv")
    cfg = _cfg(tmp_path, "c.json", dict(BASE, command="rate", io={"q_csv": "q.csv"}))
    o1, o2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["--config", str(cfg), "--out", str(o1), "--quiet"]) == 0
    assert main(["--config", str(cfg), "--out", str(o2), "--quiet"]) == 0
    for f in ("summary.json", "pbar.csv", "h.csv", "kdot.csv"):
        assert (o1 / f).read_bytes() == (o2 / f).read_bytes()
