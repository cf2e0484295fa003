import json

import numpy as np
import pytest

from vendingrd.cli import main
from vendingrd.closed_form import ExampleCase, appendixB_policy, case1_r1, hb_case2_r1
from vendingrd.model import binary_erasure_spec, save_spec, with_node3_erasure_metric
from vendingrd.probability import Alphabet, Kernel
from vendingrd.region import Policy, load_policy, save_policy

EPS = 0.2


@pytest.fixture()
def spec_path(tmp_path):
    path = tmp_path / "spec.json"
    save_spec(binary_erasure_spec(EPS), path)
    return path


def _policy_path(tmp_path, tag, gamma, name="policy.json"):
    path = tmp_path / name
    save_policy(appendixB_policy(ExampleCase(tag, EPS, gamma)), path)
    return path


def _rows(text):
    """Data rows of a block CSV, skipping the header and curve comments."""
    lines = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
    return [ln.split(",") for ln in lines[1:]]


def test_closed_form_single_point(capsys):
    assert main(["closed-form", "--case", "case1", "--epsilon", "0", "--gamma", "0.5"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "gamma,r1,r2,feasible"
    assert _rows(out) == [["0.5", "0.5", "0", "1"]]


def test_closed_form_fig4_preset(capsys):
    assert main(["closed-form", "--preset", "fig4", "--epsilon", "0.2"]) == 0
    out = capsys.readouterr().out
    assert "inf" not in out and "nan" not in out
    blocks = {}
    current = None
    for line in out.strip().splitlines()[1:]:
        if line.startswith("#"):
            current = line.split()[1]
            blocks[current] = []
        else:
            blocks[current].append(line.split(","))
    assert set(blocks) == {"case1", "case2", "case2_ts", "case3"}
    assert all(len(rows) == 101 for rows in blocks.values())
    case2 = blocks["case2"]
    below = [r for r in case2 if float(r[0]) < EPS - 1e-12]
    assert all(r[1] == "" and r[2] == "" and r[3] == "0" for r in below)
    at_eps = next(r for r in case2 if r[0] == "0.2")
    assert float(at_eps[1]) == pytest.approx(0.721928094887, abs=1e-9)
    last = case2[-1]
    assert last[0] == "1" and float(last[1]) == 0.0 and last[3] == "1"


def test_closed_form_fig6_curves_flatten(capsys):
    grid = ["0.4", "0.6", "0.8", "1.0"]
    assert main(["closed-form", "--preset", "fig6", "--epsilon", "0.2", "--gamma", *grid]) == 0
    out = capsys.readouterr().out
    assert "# hb_case2 epsilon=0.2 d3=0.4" in out
    rows = _rows(out)[:4]
    rates = [float(r[1]) for r in rows]
    flat = hb_case2_r1(EPS, 0.4, 0.4)
    assert all(r == pytest.approx(flat, abs=1e-6) for r in rates)


def test_closed_form_flag_validation():
    assert main(["closed-form", "--case", "case1", "--epsilon", "1.5"]) == 2
    assert main(["closed-form", "--case", "hb_case2", "--epsilon", "0.2"]) == 2
    assert main(["closed-form", "--case", "case2", "--epsilon", "0.2", "--d3", "0.4"]) == 2


def test_evaluate_reports_reference_point(spec_path, tmp_path, capsys):
    policy = _policy_path(tmp_path, "case1", 0.4)
    assert main(["evaluate", "--spec", str(spec_path), "--policy", str(policy)]) == 0
    out = capsys.readouterr().out
    assert "r1 = 1.12192809489" in out
    assert "gamma = 0.4" in out
    assert "feasible = 1" in out
    assert out.count("(ok)") == 2


def test_evaluate_rejects_mismatched_policy(spec_path, tmp_path, capsys):
    hb = with_node3_erasure_metric(binary_erasure_spec(EPS))
    z, a, y, w = hb.z_alpha, hb.a_alpha, hb.y_alpha, hb.xhat3_alpha
    u = Alphabet("u", ("u0",))
    v = Alphabet("v", ("v0",))
    f = np.zeros((3, 2, 1, 3))
    f[:, 1, 0, 2] = 1.0
    policy = Policy(
        Kernel((z,), (a, u, w), f), Kernel((a, u, y, w), (v,), np.ones((2, 1, 3, 3, 1)))
    )
    path = tmp_path / "hb_policy.json"
    save_policy(policy, path)
    assert main(["evaluate", "--spec", str(spec_path), "--policy", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_evaluate_missing_file(spec_path, tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["evaluate", "--spec", str(spec_path), "--policy", str(missing)]) == 2


def test_sweep_seeded_single_point(spec_path, tmp_path, capsys):
    seed = _policy_path(tmp_path, "case1", 0.4)
    code = main(
        [
            "sweep", "--spec", str(spec_path), "--d1", "0.5", "--d2", "0.0",
            "--gammas", "0.4", "--restarts", "1", "--max-iters", "4", "--hops", "0",
            "--cardinality", "3", "3", "--seed-policy", str(seed),
        ]
    )
    assert code == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 1
    gamma, r1, r2, d1, d2, d3, residual, feasible = rows[0]
    assert feasible == "1"
    assert float(r1) == pytest.approx(case1_r1(EPS, 0.4), abs=1e-4)
    assert abs(float(residual)) < 1e-9
    assert d3 == ""


def test_sweep_all_infeasible_exits_3(spec_path, capsys):
    code = main(
        [
            "sweep", "--spec", str(spec_path), "--d1", "0.0", "--d2", "1.0",
            "--gammas", "0.05", "0.1", "--restarts", "1", "--max-iters", "2",
            "--hops", "0", "--cardinality", "2", "2",
        ]
    )
    assert code == 3
    rows = _rows(capsys.readouterr().out)
    assert all(r[-1] == "0" and r[1] == "" and r[2] == "" for r in rows)


def test_sweep_dumps_policies_and_manifest(spec_path, tmp_path):
    seed = _policy_path(tmp_path, "case2", 0.6)
    out_csv = tmp_path / "sweep.csv"
    dump_dir = tmp_path / "policies"
    code = main(
        [
            "sweep", "--spec", str(spec_path), "--d1", "0.0", "--d2", "1.0",
            "--gammas", "0.6", "--restarts", "1", "--max-iters", "4", "--hops", "0",
            "--cardinality", "3", "3", "--seed-policy", str(seed),
            "--dump-policies", str(dump_dir), "--output", str(out_csv),
        ]
    )
    assert code == 0
    dumped = dump_dir / "policy_gamma_0.6.json"
    assert dumped.exists()
    load_policy(dumped)
    manifest = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
    assert manifest["command"] == "sweep"
    assert manifest["rng_seeds"] == [0]
    assert str(out_csv) in manifest["outputs"]
    assert str(dumped) in manifest["outputs"]
    assert manifest["parameters"]["gammas"] == [0.6]


def test_simulate_is_deterministic(tmp_path):
    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    flags = [
        "simulate", "--scheme", "case1", "--n", "20000", "--epsilon", "0.2",
        "--gamma", "0.4", "--seed", "7", "--trials", "3",
    ]
    assert main(flags + ["--output", str(first)]) == 0
    assert main(flags + ["--output", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    header, row = first.read_text().strip().splitlines()
    assert header.startswith("scheme,n,epsilon,gamma,trials,r1_hat")
    cells = row.split(",")
    assert cells[0] == "case1"
    assert float(cells[5]) == pytest.approx(case1_r1(EPS, 0.4), abs=0.01)


def test_simulate_exit_codes(capsys):
    assert main(["simulate", "--scheme", "case3", "--n", "100", "--epsilon", "0.2", "--gamma", "0.1"]) == 3
    assert main(["simulate", "--scheme", "case1", "--n", "0", "--epsilon", "0.2", "--gamma", "0.4"]) == 2
