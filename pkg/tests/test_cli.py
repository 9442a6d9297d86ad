import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from distmle.cli import _theta, cli_main
from distmle.harness import SUMMARY_FIELDS


def run(argv, capsys):
    code = cli_main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def fields(text):
    return {line.split()[0]: line.split()[-1] for line in text.strip().splitlines()}


@pytest.mark.parametrize("text,value", [("pi/4", math.pi / 4), ("-pi/2", -math.pi / 2), ("2pi/3", 2 * math.pi / 3),
                                        ("pi", math.pi), ("0.5", 0.5)])
def test_theta_parsing(text, value):
    assert _theta(text) == pytest.approx(value)


def test_curvature(capsys):
    code, out, _ = run(["curvature", "--a", "1", "--b", "5", "--theta", "pi/4"], capsys)
    f = fields(out)
    assert code == 0
    assert float(f["fisher"]) == pytest.approx(13.0)
    assert float(f["gamma"]) == pytest.approx(5 * 13**-1.5, rel=1e-8)
    assert float(f["gamma_sq"]) == pytest.approx(0.011379, rel=1e-4)


def test_predict_numbers(capsys):
    code, out, _ = run(["predict", "--gamma-sq", "0.011374", "--fisher", "13", "--n", "1000", "--d", "10"], capsys)
    assert code == 0
    assert float(fields(out)["mse_vs_mle"]) == pytest.approx(7.87e-9, rel=1e-3)


def test_predict_model_linear(capsys):
    code, out, _ = run(["predict", "--model", "ellipse", "--theta", "pi/4", "--combiner", "linear",
                        "--n", "1000", "--d", "10"], capsys)
    f = fields(out)
    assert code == 0
    assert float(f["beta"]) == pytest.approx(6 / 169, rel=1e-8)
    assert float(f["bias_vs_mle"]) == pytest.approx(9 * 6 / 169 / 1000, rel=1e-5)


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "1000"],
    ["simulate", "--model", "ellipse", "--bogus"],
    ["simulate", "--model", "ellipse", "--n", "1001"],
    ["simulate", "--model", "ellipse", "--combiners", "matched_linear"],
    ["predict", "--n", "10", "--d", "2"],
    ["predict", "--gamma-sq", "1", "--fisher", "0", "--n", "10", "--d", "2"],
    ["curvature"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert err


def test_simulate_stdout(capsys):
    code, out, _ = run(["simulate", "--model", "variance", "--parameterization", "std", "--n", "200",
                        "--d", "5", "--trials", "3"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert tuple(rows[0]) == SUMMARY_FIELDS
    assert [r[1] for r in rows[1:]] == ["kl", "linear", "mle"]


def test_simulate_config_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "ellipse", "n": [200], "d": 5, "trials": 2, "seed": 4}))
    out = tmp_path / "res.json"
    code, _, _ = run(["simulate", "--config", str(cfg), "--trials", "3", "--out", str(out),
                      "--format", "json", "--records"], capsys)
    assert code == 0
    rows = json.loads(out.read_text())
    assert {r["trials"] for r in rows} == {3}
    recs = json.loads((tmp_path / "res.json.records.json").read_text())
    assert len(recs) == 9 and {r["seed"] for r in recs} == {4}


def test_simulate_reproducible(tmp_path, capsys):
    args = ["simulate", "--model", "ellipse", "--n", "200", "--d", "5", "--trials", "4", "--seed", "9"]
    outs = []
    for name, extra in (("a.csv", []), ("b.csv", ["--workers", "2"])):
        path = tmp_path / name
        assert run(args + extra + ["--out", str(path)], capsys)[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert run(["simulate", "--config", str(cfg)], capsys)[0] == 2
    cfg.write_text('{"model": "ellipse", "colour": 1}')
    assert run(["simulate", "--config", str(cfg)], capsys)[0] == 2
    assert run(["simulate", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2


def test_gmm_demo_synthetic(capsys):
    code, out, _ = run(["gmm-demo", "--n", "600", "--d", "6", "--m-per-local", "300"], capsys)
    assert code == 0
    test_ll = {line.split()[0]: float(line.split()[-1]) for line in out.strip().splitlines()[1:]}
    assert set(test_ll) == {"global_mle", "naive_linear", "matched_linear", "kl_bootstrap"}
    assert test_ll["kl_bootstrap"] > test_ll["naive_linear"]


def test_gmm_demo_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lab = np.repeat([0, 1], 150)
    X = rng.normal(size=(300, 2)) + 6 * lab[:, None]
    path = tmp_path / "data.csv"
    np.savetxt(path, np.column_stack([X, lab]), delimiter=",")
    code, out, _ = run(["gmm-demo", "--data", str(path), "--labels", "--K", "2", "--d", "4"], capsys)
    assert code == 0 and "test points 60" in out
    assert run(["gmm-demo", "--data", str(path), "--K", "2", "--d", "4"], capsys)[0] == 2
    assert run(["gmm-demo", "--data", str(tmp_path / "nope.csv")], capsys)[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "distmle", "curvature", "--theta", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "fisher" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "distmle", "simulate"], capture_output=True, text=True)
    assert proc.returncode == 2
