import json
import subprocess
import sys

import numpy as np
import pytest

from parmac.cli import main
from parmac.data import write_fvecs
from parmac.model import BAModel, save_checkpoint
from parmac.speedup import REFERENCE_PARAMS, emit_curve

TINY = {"data": {"n": 400, "d": 6, "clusters": 4, "seed": 1}, "L": 3,
        "schedule": {"mu0": 0.01, "factor": 1.5, "max_iters": 3}, "eval": {"K_true": 5, "k_retrieved": 5}}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["train", "--bogus"]) == 1
    assert main(["train", "--out-dir", str(tmp_path)]) == 1
    assert main(["train", "--data", str(tmp_path / "missing.fvecs"), "--out-dir", str(tmp_path)]) == 2
    assert main(["train", "--data", str(tmp_path / "x.txt"), "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "parmac", "speedup", "--p-max", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[0] == "P,S_exact,S_divisible,interval_k"


def test_gen_writes_fvecs(tmp_path):
    out = tmp_path / "d.fvecs"
    assert main(["gen", "--n", "30", "--d", "4", "--seed", "2", "--out", str(out)]) == 0
    assert out.stat().st_size == 30 * (4 + 4 * 4)


def test_run_single_machine_equals_train(tmp_path, tiny_config):
    a, b = tmp_path / "train", tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out-dir", str(a)]) == 0
    assert main(["run", "--config", str(tiny_config), "--P", "1", "--out-dir", str(b)]) == 0
    for name in ("model.bin", "curve.csv", "record.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    comm = json.loads((b / "commlog.json").read_text())
    assert comm["messages_sent"] == comm["messages_received"] == 0


def test_run_is_reproducible(tmp_path, tiny_config):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["run", "--config", str(tiny_config), "--P", "3", "--out-dir", str(o)]) == 0
    for name in ("model.bin", "curve.csv", "record.json", "commlog.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_speedup_curve_matches_library(tmp_path):
    out = tmp_path / "curve.csv"
    assert main(["speedup", "--out", str(out)]) == 0
    assert out.read_text() == emit_curve(REFERENCE_PARAMS, 2048)


def test_speedup_verify(tmp_path):
    out = tmp_path / "v.json"
    assert main(["speedup", "--verify", "--draws", "3", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["draws"] == 18 and report["violations"] == []


def test_eval_golden(tmp_path):
    base = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
    queries = np.array([[0.4], [11.6], [5.5]])
    (tmp_path / "b.fvecs").write_bytes(write_fvecs(base))
    (tmp_path / "q.fvecs").write_bytes(write_fvecs(queries))
    (tmp_path / "m.bin").write_bytes(save_checkpoint(BAModel(np.array([[1.0, -5.0]]), np.zeros((1, 2)))))
    out = tmp_path / "metrics.json"
    assert main(["eval", "--base", str(tmp_path / "b.fvecs"), "--queries", str(tmp_path / "q.fvecs"),
                 "--model", str(tmp_path / "m.bin"), "--K-true", "3", "--k-retrieved", "4",
                 "--R", "1", "4", "10", "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    # hits per query: 3/4, 3/4, 1/4; true-neighbour ranks 1, 1, 4
    assert metrics["precision"] == pytest.approx(100 * 7 / 12, abs=1e-12)
    assert metrics["recall"] == {"1": pytest.approx(2 / 3), "4": 1.0, "10": 1.0}


def test_eval_needs_inputs():
    assert main(["eval"]) == 1


def test_simulate_scenario(tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"P": 4, "L": 4, "d": 8, "n": 200, "seeds": 0, "schedule": {"max_iters": 1},
                              "faults": [{"tick": 3, "machine": 2, "phase": "W"}]}))
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(sc), "--out-dir", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,tick,machine,submodel,action,counter,round"
    assert any(",fault," in ln for ln in lines)
    assert any(",recover," in ln for ln in lines)


def test_fit_times(tmp_path, capsys):
    m = tmp_path / "m.json"
    m.write_text(json.dumps([[1, 1.0], [2, 1.9], [4, 3.5]]))
    assert main(["fit-times", "--measured", str(m), "--N", "1000", "--M", "8"]) == 0
    fitted = json.loads(capsys.readouterr().out)
    assert fitted["t_w_r"] == 1.0 and fitted["t_w_c"] > 0 and fitted["t_z_r"] > 0
