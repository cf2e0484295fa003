"""End-to-end acceptance checks.

One test per criterion; each prints a single pass line with its runtime so a
full run reads as a scoreboard.  Tolerances and runtime budgets are part of
the assertions.
"""
import time

import numpy as np
import pytest

from vendingrd.closed_form import (
    ExampleCase,
    appendixB_policy,
    case1_r1,
    case2_r1,
    case2_ts_r1,
    case3_r1,
    example_rate,
    hb_case2_r1,
)
from vendingrd.model import binary_erasure_spec
from vendingrd.probability import (
    Alphabet,
    JointPmf,
    Kernel,
    check_markov,
    conditional_mutual_information,
    entropy,
)
from vendingrd.region import (
    OptimizerConfig,
    Policy,
    Targets,
    assemble_joint,
    evaluate_point,
    markov_chains,
    minimize_r1,
    random_policy,
)
from vendingrd.sim import SimConfig, convergence_table, run_scheme

EPS = 0.2
GRID_05 = [round(0.05 * k, 2) for k in range(21)]


def _report(capsys, idx, label, elapsed, bound):
    assert elapsed < bound, f"criterion {idx} took {elapsed:.1f} s, budget {bound:.0f} s"
    with capsys.disabled():
        print(f"criterion {idx} PASS {label} ({elapsed:.1f} s / budget {bound:.0f} s)")


def test_criterion_1_closed_form_oracle_equality(capsys):
    start = time.perf_counter()
    spec = binary_erasure_spec(EPS)
    curves = (
        ("case1", case1_r1, 0.0, 0.0),
        ("case2", case2_r1, EPS, EPS),
        ("case3", case3_r1, EPS, EPS),
    )
    for tag, rate_fn, gamma_min, r2_expect in curves:
        for g in GRID_05:
            if g < gamma_min - 1e-12:
                continue
            point = evaluate_point(spec, appendixB_policy(ExampleCase(tag, EPS, g)))
            assert abs(point.r1 - rate_fn(EPS, g)) <= 1e-9, (tag, g)
            assert abs(point.r2 - r2_expect) <= 1e-9, (tag, g)
    _report(capsys, 1, "closed-form oracle equality", time.perf_counter() - start, 1.0)


def test_criterion_2_time_sharing_strictly_suboptimal(capsys):
    start = time.perf_counter()
    for k in range(5, 20):
        g = round(0.05 * k, 2)
        assert case2_ts_r1(EPS, g) - case2_r1(EPS, g) > 0.0, g
    gap = case2_ts_r1(EPS, 0.6) - case2_r1(EPS, 0.6)
    assert abs(gap - 0.1900134529) <= 1e-9
    _report(capsys, 2, "time sharing strictly suboptimal", time.perf_counter() - start, 1.0)


def test_criterion_3_third_node_curves(capsys):
    start = time.perf_counter()
    feasible = [g for g in GRID_05 if g >= EPS]
    for g in feasible:
        assert abs(hb_case2_r1(EPS, g, 1.0) - case2_r1(EPS, g)) <= 1e-6, g
    for d3 in (0.4, 0.6, 0.8, 1.0):
        plateau = [hb_case2_r1(EPS, g, d3) for g in feasible if g >= d3]
        assert all(abs(r - plateau[0]) <= 1e-6 for r in plateau), d3
        for g in feasible:
            if g <= d3:
                assert abs(hb_case2_r1(EPS, g, d3) - case2_r1(EPS, g)) <= 1e-6, (d3, g)
    _report(capsys, 3, "third-node curves (flat beyond d3)", time.perf_counter() - start, 10.0)


def test_criterion_4_converse_property_suite(capsys):
    start = time.perf_counter()
    spec = binary_erasure_spec(EPS)
    z, a, y = spec.z_alpha, spec.a_alpha, spec.y_alpha
    rng = np.random.default_rng(2024)

    u_copy = Alphabet("u", z.symbols)
    v_const = Alphabet("v", ("v0",))
    for _ in range(200):
        f = np.zeros((3, 2, 3))
        probs = rng.uniform(0.0, 1.0, size=3)
        for zi in range(3):
            f[zi, 1, zi] = probs[zi]
            f[zi, 0, zi] = 1.0 - probs[zi]
        policy = Policy(
            Kernel((z,), (a, u_copy), f),
            Kernel((a, u_copy, y), (v_const,), np.ones((2, 3, 3, 1))),
        )
        point = evaluate_point(spec, policy)
        assert point.r1 >= case1_r1(EPS, point.gamma) - 1e-9

    u_triv = Alphabet("u", ("u0",))
    v_relay = Alphabet("v", y.symbols)
    b = np.zeros((2, 1, 3, 3))
    for yi in range(3):
        b[:, :, yi, yi] = 1.0
    for _ in range(200):
        f = np.zeros((3, 2, 1))
        probs = rng.uniform(0.0, 1.0, size=2)
        for zi in (0, 1):
            f[zi, 1, 0] = probs[zi]
            f[zi, 0, 0] = 1.0 - probs[zi]
        f[2, 1, 0] = 1.0
        policy = Policy(Kernel((z,), (a, u_triv), f), Kernel((a, u_triv, y), (v_relay,), b))
        point = evaluate_point(spec, policy)
        assert point.r1 >= case2_r1(EPS, point.gamma) - 1e-9
    _report(capsys, 4, "converse property suite (400 policies)", time.perf_counter() - start, 30.0)


def _criterion5_targets(tag, gamma):
    if tag == "case1":
        return Targets(d1=0.5, d2=0.0, gamma=gamma)
    if tag == "case2":
        return Targets(d1=0.0, d2=0.6, gamma=gamma)
    return Targets(d1=0.0, d2=0.0, gamma=gamma)


def test_criterion_5_optimizer_sanity(capsys):
    start = time.perf_counter()
    spec = binary_erasure_spec(EPS)
    points = [(tag, g) for tag in ("case1", "case2", "case3") for g in (0.3, 0.6, 0.9)]

    seeded_config = OptimizerConfig(restarts=1, max_iters=12, hops=0, cardinality_override=(3, 3))
    for tag, g in points:
        case = ExampleCase(tag, EPS, g)
        result = minimize_r1(
            spec, _criterion5_targets(tag, g), seeded_config, seeds=[appendixB_policy(case)]
        )
        assert result.feasible, (tag, g)
        assert abs(result.point.r1 - example_rate(case)) <= 1e-6, (tag, g)

    random_config = OptimizerConfig(restarts=64, max_iters=12, hops=4, cardinality_override=(3, 3))
    for tag, g in points:
        result = minimize_r1(spec, _criterion5_targets(tag, g), random_config)
        assert result.feasible, (tag, g)
        assert abs(result.point.r1 - example_rate(ExampleCase(tag, EPS, g))) <= 0.05, (tag, g)
    _report(capsys, 5, "optimizer recovers the curves", time.perf_counter() - start, 300.0)


def test_criterion_6_simulation_convergence(capsys):
    start = time.perf_counter()
    case1 = run_scheme(SimConfig("case1", 100000, EPS, 0.4, rng_seed=0, trials=10))
    assert 1.1119 <= case1.r1_hat <= 1.1319
    assert case1.d2_hat == 0.0
    assert case1.cost_hat <= 0.401

    case3 = run_scheme(SimConfig("case3", 100000, EPS, 0.6, rng_seed=0, trials=10))
    assert 1.1119 <= case3.r1_hat <= 1.1319
    assert 0.195 <= case3.r2_hat <= 0.205

    table = convergence_table(
        SimConfig("case1", 1, EPS, 0.4, rng_seed=0, trials=20), [1000, 10000, 100000]
    )
    gaps = [gap for _, gap in table]
    assert gaps[0] > gaps[1] > gaps[2]
    _report(capsys, 6, "simulation convergence", time.perf_counter() - start, 120.0)


def test_criterion_7_structural_invariants(capsys):
    start = time.perf_counter()
    spec = binary_erasure_spec(EPS)
    chains = markov_chains(spec)
    rng = np.random.default_rng(7)
    for _ in range(100):
        nu = int(rng.integers(1, 5))
        nv = int(rng.integers(1, 5))
        joint = assemble_joint(spec, random_policy(spec, nu, nv, rng))
        for left, mid, right in chains:
            ok, resid = check_markov(joint, left, mid, right, tol=1e-10)
            assert ok, (left, mid, right, resid)

    for _ in range(1000):
        shape = tuple(int(rng.integers(2, 4)) for _ in range(3))
        table = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
        variables = tuple(
            (name, Alphabet(name, tuple(f"{name}{i}" for i in range(size))))
            for name, size in zip(("x", "y", "z"), shape)
        )
        joint = JointPmf(variables, table)
        h = entropy(joint, ["x", "y", "z"])
        assert h >= 0.0
        whole = conditional_mutual_information(joint, ["x"], ["y", "z"])
        first = conditional_mutual_information(joint, ["x"], ["y"])
        second = conditional_mutual_information(joint, ["x"], ["z"], ["y"])
        assert whole >= 0.0 and first >= 0.0 and second >= 0.0
        assert abs(whole - first - second) <= 1e-10
        perm = rng.permutation(shape[2])
        relabeled = JointPmf(variables, table[:, :, perm])
        assert abs(entropy(relabeled, ["x", "y", "z"]) - h) <= 1e-12
        assert (
            abs(conditional_mutual_information(relabeled, ["x"], ["z"], ["y"]) - second) <= 1e-12
        )
    _report(capsys, 7, "structural invariants", time.perf_counter() - start, 60.0)
