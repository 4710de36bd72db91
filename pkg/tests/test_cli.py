import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pacsim.cli import main

GOLDEN = Path(__file__).parent / "golden"


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "model"
    assert main(["gen-model", "--seed", "1", "--input-hw", "4", "--width", "8", "--classes", "4", "-o", str(root)]) == 0
    return root


def test_rmse_golden(capsys):
    code, out, _ = run(["rmse", "--n", "64", "--sx", "0.25", "--sw", "0.5", "--trials", "500", "--seed", "7",
                        "--no-timestamp"], capsys)
    assert code == 0
    assert out == (GOLDEN / "rmse_n64_seed7.csv").read_text()


def test_rmse_zero_sparsity(capsys):
    code, out, _ = run(["rmse", "--sx", "0", "--trials", "50", "--no-timestamp"], capsys)
    row = out.splitlines()[-1].split(",")
    assert code == 0 and row[3] == "0.0"


def test_timestamp_line(capsys):
    _, out, _ = run(["rmse", "--n", "16", "--trials", "10"], capsys)
    assert any(line.startswith("# generated ") for line in out.splitlines())


def test_seed_echo_and_env(capsys, monkeypatch):
    monkeypatch.setenv("PACSIM_SEED", "123")
    _, out, _ = run(["rmse", "--n", "16", "--trials", "10", "--no-timestamp"], capsys)
    assert "# seed=123" in out and out.splitlines()[-1].split(",")[7] == "123"
    _, out, _ = run(["rmse", "--n", "16", "--trials", "10", "--seed", "4", "--no-timestamp"], capsys)
    assert "# seed=4" in out


@pytest.mark.parametrize("argv", [
    ["rmse", "--sx", "1.5"],
    ["rmse", "--n", "0"],
    ["sweep", "--n", "a,b"],
    ["infer"],
    ["bogus"],
    ["infer", "--model", "x", "--thresholds", "0.3,0.2,0.1"],
    ["profile"],
    ["gen-model"],
])
def test_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_runtime_error(capsys, tmp_path):
    code, _, err = run(["infer", "--model", str(tmp_path)], capsys)
    assert code == 1 and "manifest" in err


def test_config_file_and_flag_precedence(capsys, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n": 32, "trials": 20, "seed": 9, "sx": 0.5}))
    _, out, _ = run(["rmse", "--config", str(conf), "--no-timestamp"], capsys)
    row = out.splitlines()[-1].split(",")
    assert row[0] == "32" and row[1] == "0.5" and row[7] == "9"
    _, out, _ = run(["rmse", "--config", str(conf), "--n", "16", "--no-timestamp"], capsys)
    assert out.splitlines()[-1].split(",")[0] == "16"
    conf.write_text(json.dumps({"nope": 1}))
    assert run(["rmse", "--config", str(conf)], capsys)[0] == 2


def test_sweep_slope(capsys):
    _, out, _ = run(["sweep", "--n", "128,512", "--sx", "0.3", "--sw", "0.5", "--trials", "3000",
                     "--no-timestamp"], capsys)
    rows = [r for r in out.splitlines() if not r.startswith("#")]
    assert rows[0].endswith(",slope") and len(rows) == 3
    assert float(rows[1].split(",")[-1]) == pytest.approx(-0.5, abs=0.1)


def test_infer(model_dir, capsys, tmp_path):
    logits = tmp_path / "l.u8"
    code, out, _ = run(["infer", "--model", str(model_dir), "--random-inputs", "5", "--compare-exact",
                        "--thresholds", "0.1,0.2,0.3", "--logits-out", str(logits), "--no-timestamp"], capsys)
    assert code == 0
    assert "# argmax_agreement=" in out
    rows = [r.split(",") for r in out.splitlines() if not r.startswith("#")]
    assert rows[0][:7] == ["layer", "name", "kind", "mode", "n", "windows", "avg_digital_cycles"]
    assert float(rows[1][6]) == 64.0 and 10.0 <= float(rows[2][6]) <= 16.0
    assert np.fromfile(logits, dtype=np.uint8).shape == (5 * 4,)


def test_infer_approx_zero_equals_exact(model_dir, capsys, tmp_path):
    a, b = tmp_path / "a.u8", tmp_path / "b.u8"
    run(["infer", "--model", str(model_dir), "--random-inputs", "4", "--approx-bits", "0", "--logits-out", str(a)], capsys)
    run(["infer", "--model", str(model_dir), "--random-inputs", "4", "--mode", "exact", "--logits-out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_infer_input_file(model_dir, capsys, tmp_path):
    raw = tmp_path / "x.u8"
    np.arange(2 * 4 * 4 * 3, dtype=np.uint8).tofile(raw)
    code, out, _ = run(["infer", "--model", str(model_dir), "--input", str(raw), "--no-timestamp"], capsys)
    assert code == 0 and "# inputs=2" in out
    raw.write_bytes(b"\x01\x02")
    assert run(["infer", "--model", str(model_dir), "--input", str(raw)], capsys)[0] == 1


def test_cost(capsys):
    _, out, _ = run(["cost", "--n", "64", "--no-timestamp"], capsys)
    rows = [r.split(",") for r in out.splitlines() if not r.startswith("#")]
    assert rows[1][0] == "baseline" and rows[2][0] == "hybrid"
    assert float(rows[2][7]) == pytest.approx(39.0625)
    _, out, _ = run(["cost", "--table"], capsys)
    assert out.startswith("scheme")


def test_profile(model_dir, capsys, tmp_path):
    _, out, _ = run(["profile", "--model", str(model_dir), "--random-inputs", "2", "--no-timestamp"], capsys)
    rows = [r.split(",") for r in out.splitlines() if not r.startswith(("#", "layer,"))]
    assert {r[1] for r in rows} == {"weight", "activation"}
    assert all(0.0 <= float(r[3]) <= 1.0 for r in rows)
    zeros = tmp_path / "z.u8"
    np.zeros(100, dtype=np.uint8).tofile(zeros)
    _, out, _ = run(["profile", "--tensor", str(zeros), "--no-timestamp"], capsys)
    assert [r.split(",")[3] for r in out.splitlines() if not r.startswith(("#", "layer"))] == ["0.0"] * 8


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pacsim", "cost", "--table"], capture_output=True, text=True)
    assert out.returncode == 0 and "baseline" in out.stdout
