import json

import numpy as np
import pytest

from rcm_handeye import cli
from rcm_handeye.grad import GradReport

FAST = ["--lr", "3e-3", "--epochs", "150", "--decay-factor", "0.6", "--window", "16"]


@pytest.fixture(scope="module")
def sim_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data, gt = d / "data.jsonl", d / "gt.jsonl"
    assert cli.run(["simulate", "--out", str(data), "--gt", str(gt), "--seed", "0"]) == 0
    return d, data, gt


def test_default_flags():
    args = cli.build_parser().parse_args(["calibrate", "--data", "x", "--out", "y"])
    assert (args.epochs, args.lr, args.decay_factor, args.decay_every, args.window) == (50, 1e-4, 0.75, 10, 32)
    assert (args.weights.c1, args.weights.c2, args.weights.c3) == (100.0, 1.0, 0.75)
    assert args.drift == "static"


def test_simulate_calibrate_evaluate(sim_files):
    d, data, gt = sim_files
    result, stats = d / "result.json", d / "stats.json"
    assert cli.run(["calibrate", "--data", str(data), "--out", str(result), *FAST]) == 0
    rep = json.loads(result.read_text())
    # a converged estimate may sit on a kink, where the check is refused rather than failed
    assert rep["gradcheck"]["passed"] is not False
    assert cli.run(["evaluate", "--data", str(data), "--handeye", str(result), "--out", str(stats)]) == 0
    assert json.loads(stats.read_text())["pooled"]["mean"] < 0.5


def test_zero_weights_report(sim_files):
    d, data, _ = sim_files
    out = d / "zero.json"
    assert cli.run(["calibrate", "--data", str(data), "--out", str(out), "--weights", "0,0,0", "--epochs", "2"]) == 0
    rep = json.loads(out.read_text())
    assert rep["final_loss"]["total"] == 0.0
    assert rep["zero_gradient"] and rep["converged_immediately"]


def test_gradcheck_passes(sim_files, capsys):
    d, data, _ = sim_files
    out = d / "gc.json"
    assert cli.run(["gradcheck", "--data", str(data), "--samples", "20", "--seed", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["samples"] == 20 and not rep["failed"] and rep["max_rel_error"] < 1e-5
    assert sum(r["drift"] for r in rep["results"]) == 10
    assert "PASS" in capsys.readouterr().err


def test_gradcheck_failure_exits_2(sim_files, monkeypatch):
    _, data, _ = sim_files

    def failing(*args, **kwargs):
        z = np.zeros(9)
        return GradReport(z, z, z, 1.0, False)

    monkeypatch.setattr(cli, "gradient_check", failing)
    assert cli.run(["gradcheck", "--data", str(data), "--samples", "2", "--out", "/dev/null"]) == 2


def test_sweep_csv(sim_files):
    d, data, gt = sim_files
    out = d / "sweep.csv"
    assert cli.run(["sweep", "--data", str(data), "--gt", str(gt), "--mm", "1,2", "--directions", "x", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "magnitude_mm,direction,min_px,mean_px,max_px"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "2"]


def test_online_writes_trajectory(sim_files):
    d, data, _ = sim_files
    out = d / "traj.jsonl"
    assert cli.run(["online", "--data", str(data), "--out", str(out), "--epochs", "2", "--drift", "linear"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 22
    assert set(json.loads(lines[0])) == {"t", "T_cam_ecm", "params"}


def test_config_file_merged_under_flags(sim_files):
    d, data, _ = sim_files
    cfg = d / "opts.json"
    cfg.write_text(json.dumps({"data": str(data), "epochs": 1, "weights": [0, 0, 0], "drift": "linear"}))
    out = d / "cfgrun.json"
    assert cli.run(["calibrate", "--config", str(cfg), "--out", str(out), "--epochs", "2"]) == 0
    rep = json.loads(out.read_text())
    assert rep["settings"]["epochs"] == 2
    assert rep["settings"]["weights"] == [0.0, 0.0, 0.0]
    assert rep["estimate"]["mode"] == "linear"


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["calibrate", "--data", "x"],
    ["calibrate", "--data", "x", "--out", "y", "--unknown"],
    ["calibrate", "--data", "x", "--out", "y", "--weights", "1,2"],
    ["calibrate", "--data", "x", "--out", "y", "--drift", "cubic"],
    ["calibrate", "--data", "x", "--out", "y", "--lr", "-1"],
    ["sweep", "--data", "x", "--gt", "y", "--directions", "w"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning_rate": 1}')
    assert cli.run(["calibrate", "--data", "x", "--out", "y", "--config", str(cfg)]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert cli.run(["evaluate", "--data", str(tmp_path / "missing.jsonl"), "--handeye", "x"]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"metadata": {}}\n{"t": 0}\n')
    assert cli.run(["calibrate", "--data", str(bad), "--out", str(tmp_path / "r.json")]) == 2
    err = capsys.readouterr().err
    assert "SchemaError" in err and "line 2" in err


def test_simulate_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text('{"n_frames": 1}')
    assert cli.run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--gt", str(tmp_path / "b")]) == 2
    assert "ConfigInvalid" in capsys.readouterr().err


def test_same_argv_same_bytes(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        data, gt, res = d / "data.jsonl", d / "gt.jsonl", d / "r.json"
        assert cli.run(["simulate", "--out", str(data), "--gt", str(gt), "--seed", "11"]) == 0
        assert cli.run(["calibrate", "--data", str(data), "--out", str(res), "--epochs", "3"]) == 0
        outs.append([p.read_bytes() for p in (data, gt, res)])
    assert outs[0] == outs[1]
