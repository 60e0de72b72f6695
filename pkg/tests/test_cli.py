import csv
import io
import json
import subprocess
import sys

import pytest

from affine_minimax.cli import main

from conftest import PROBLEMS

TWO_POINT = str(PROBLEMS / "two_point.json")


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def field(out, name):
    for line in out.splitlines():
        if line.startswith(name):
            return line.split(":", 1)[1].strip()
    raise KeyError(name)


def test_solve_writes_estimator(tmp_path, capsys):
    est = tmp_path / "est.json"
    code, out, _ = run(["solve", TWO_POINT, "-o", str(est)], capsys)
    assert code == 0
    assert est.exists()
    assert abs(float(field(out, "risk")) - 0.3) <= 2e-3
    assert float(field(out, "epsilon")) == 0.05
    assert "near-optimality factor" in out and "delta achieved" in out and "alpha*" in out
    assert json.loads(est.read_text())["version"] == 1


def test_estimate_prints_value_and_interval(tmp_path, capsys):
    est = tmp_path / "est.json"
    obs = tmp_path / "obs.json"
    run(["solve", TWO_POINT, "-o", str(est)], capsys)
    obs.write_text(json.dumps({"channels": [{"index": 0, "outcomes": [0]}]}))
    code, out, _ = run(["estimate", str(est), str(obs)], capsys)
    assert code == 0
    doc = json.loads(est.read_text())
    value = float(field(out, "estimate"))
    assert abs(value - doc["constant_c"]) <= doc["risk"]
    lo, hi = (float(v) for v in field(out, "interval").strip("[]").split(","))
    assert lo == pytest.approx(value - doc["risk"]) and hi == pytest.approx(value + doc["risk"])


def test_sweep_repetitions(tmp_path, capsys):
    code, out, _ = run(["sweep", TWO_POINT, "--vary", "repetitions", "--values", "1,10,100"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["value", "risk", "alpha_star", "psi_upper", "psi_lower"]
    risks = [float(r[1]) for r in rows[1:]]
    assert [r[0] for r in rows[1:]] == ["1", "10", "100"]
    assert all(b <= a + 1e-6 for a, b in zip(risks, risks[1:]))
    target = tmp_path / "sweep.csv"
    run(["sweep", TWO_POINT, "--vary", "repetitions", "--values", "1,10,100", "-o", str(target)], capsys)
    assert target.read_text() == out


def test_sweep_epsilon(capsys):
    code, out, _ = run(["sweep", TWO_POINT, "--vary", "epsilon", "--values", "0.01,0.1"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))[1:]
    assert float(rows[0][1]) >= float(rows[1][1]) - 1e-6


def test_validate_writes_report(tmp_path, capsys):
    est, rep = tmp_path / "est.json", tmp_path / "cov.json"
    run(["solve", TWO_POINT, "--epsilon", "0.1", "-o", str(est)], capsys)
    code, out, _ = run(["validate", TWO_POINT, str(est), "--n-samples", "5000", "-o", str(rep)], capsys)
    assert code == 0
    doc = json.loads(rep.read_text())
    assert doc["pass"] is True and doc["epsilon"] == 0.1 and len(doc["probes"]) == 7
    assert "coverage PASS" in out


def test_validate_with_probe_file(tmp_path, capsys):
    est, probes = tmp_path / "est.json", tmp_path / "probes.json"
    run(["solve", TWO_POINT, "-o", str(est)], capsys)
    probes.write_text(json.dumps([[0.5, 0.5], [0.2, 0.8]]))
    code, out, _ = run(["validate", TWO_POINT, str(est), "--probes", str(probes), "--n-samples", "1000"], capsys)
    assert code == 0 and out.count("probe ") == 2


def test_outputs_are_byte_stable(tmp_path, capsys):
    outs = []
    for k in range(2):
        est, rep = tmp_path / f"est{k}.json", tmp_path / f"cov{k}.json"
        _, o1, _ = run(["solve", str(PROBLEMS / "product.json"), "--epsilon", "0.1", "-o", str(est)], capsys)
        _, o2, _ = run(
            ["validate", str(PROBLEMS / "product.json"), str(est), "--n-samples", "3000", "--workers", "2", "-o", str(rep)],
            capsys,
        )
        outs.append((o1, o2, est.read_bytes(), rep.read_bytes()))
    assert outs[0] == outs[1]


def test_flags_override_solver_fields(tmp_path, capsys):
    est = tmp_path / "est.json"
    code, out, _ = run(
        ["solve", TWO_POINT, "--constant-mode", "closed-form", "--tol-inner", "1e-9", "--seed", "3", "-o", str(est)],
        capsys,
    )
    assert code == 0
    solver = json.loads(est.read_text())["provenance"]["solver"]
    assert solver["constant_mode"] == "closed-form" and solver["tol_inner"] == 1e-9 and solver["seed"] == 3


def test_large_epsilon_flag(capsys):
    code, _, err = run(["solve", TWO_POINT, "--epsilon", "0.3"], capsys)
    assert code == 2 and err.startswith("schema error:")
    code, out, _ = run(["solve", TWO_POINT, "--epsilon", "0.3", "--allow-large-epsilon"], capsys)
    assert code == 0 and "near-optimality factor :" not in out


def test_strict_escalates_precision_warning(capsys):
    assert run(["solve", TWO_POINT, "--delta", "1e-12"], capsys)[0] == 0
    assert run(["solve", TWO_POINT, "--delta", "1e-12", "--strict"], capsys)[0] == 1


@pytest.mark.parametrize(
    "argv, prefix",
    [
        (["solve", "missing.json"], "input error:"),
        (["estimate", TWO_POINT, TWO_POINT], "format error:"),
        (["sweep", TWO_POINT, "--vary", "epsilon", "--values", "a,b"], "input error:"),
        (["sweep", TWO_POINT, "--vary", "repetitions", "--values", "1.5"], "input error:"),
    ],
)
def test_input_errors(argv, prefix, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert err.startswith(prefix)


def test_schema_error_prefix(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads((PROBLEMS / "two_point.json").read_text())
    doc["channels"][0]["map_matrix"] = [[1, 0, 0], [0, 1, 0]]
    bad.write_text(json.dumps(doc))
    code, _, err = run(["solve", str(bad)], capsys)
    assert code == 2 and err.startswith("schema error:") and "dimension mismatch" in err


def test_domain_violation_is_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads((PROBLEMS / "two_point.json").read_text())
    doc["feasible_set"]["vertices"] = [[0.0, 1.0], [0.5, 0.5]]
    bad.write_text(json.dumps(doc))
    code, _, err = run(["solve", str(bad)], capsys)
    assert code == 2 and "vertex 0" in err


def test_module_entry_point(tmp_path):
    est = tmp_path / "est.json"
    proc = subprocess.run(
        [sys.executable, "-m", "affine_minimax", "solve", TWO_POINT, "-o", str(est)], capture_output=True, text=True
    )
    assert proc.returncode == 0 and "risk" in proc.stdout
