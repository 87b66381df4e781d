"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from pathmlt.experiment import ExperimentConfig, boundedness_probe, power_experiment
from pathmlt.fit import FitOptions, fit_dag_mle, fit_mle
from pathmlt.graph import (
    MixedGraph,
    bidirected_components,
    component_subgraph,
    is_acyclic,
    make_graph,
    mlt_zero_mean,
    reduction_subgraph,
    write_graph,
)
from pathmlt.model import (
    EdgeWeights,
    NoiseCovariance,
    concentration,
    covariance_from_params,
    loglik,
    sample_stats,
    save_data_csv,
)
from pathmlt.witness import build_divergence_witness, divergence_path, loglik_along_path, verify_witness

from conftest import random_dag, random_mixed, random_params, random_pd
from test_fit import fd_check
from test_model import cycle_closed_form

T_GRID = (0.0, 1.0, 10.0, 1e3, 1e6)
SUITE = [("bidirected-path", 5, 3), ("bidirected-path", 5, 4), ("fig1b", None, 3), ("experiment", 12, 3)]


def report(capsys, number, ok, detail, elapsed=None, budget=None):
    if budget is not None:
        ok = ok and elapsed < budget
        detail = f"{detail}; {elapsed:.1f}s of {budget:g}s"
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def random_tree(rng, p):
    return MixedGraph.from_edges(p, [], [(int(rng.integers(1, j)), j) for j in range(2, p + 1)])


def test_criterion_1_thresholds(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    bad = []

    def check(name, g, expected):
        got = mlt_zero_mean(g).threshold_zero_mean
        if got != expected:
            bad.append((name, got, expected))

    check("fig1a", make_graph("fig1a"), 3)
    check("fig1b", make_graph("fig1b"), 4)
    for p in range(3, 11):
        check(f"C_{p}", make_graph("directed-cycle", p), 2)
    for p in range(2, 11):
        check(f"path {p}", make_graph("bidirected-path", p), p)
        check(f"clique {p}", make_graph("bidirected-complete", p), p)
        check(f"tree {p}", random_tree(rng, p), p)
    for k in range(1000):
        p = int(rng.integers(1, 11))
        g = random_dag(rng, p, float(rng.uniform(0.1, 0.7)))
        indeg = [0] * p
        for _, j in g.directed:
            indeg[j - 1] += 1
        check(f"dag {k}", g, 1 + max(indeg))
    report(capsys, 1, not bad, f"{len(bad)} mismatches {bad[:3]}", time.perf_counter() - t0, 5)


def test_criterion_2_witness_divergence(capsys):
    t0 = time.perf_counter()
    failures = []
    worst = math.inf
    for kind, p, n in SUITE:
        g = make_graph(kind, p)
        rng = np.random.default_rng([2, g.p, n])
        for r in range(100):
            stats = sample_stats(rng.standard_normal((n, g.p)), zero_mean=True)
            try:
                w = build_divergence_witness(g, stats)
            except Exception as exc:  # any failure to build counts against the criterion
                failures.append((kind, n, r, repr(exc)))
                continue
            passed = verify_witness(w, g, stats, T_GRID).passed
            gain = loglik_along_path(w, 1e6) - loglik_along_path(w, 0.0)
            worst = min(worst, gain)
            if not passed or gain < 10:
                failures.append((kind, n, r, passed, gain))
    detail = f"{400 - len(failures)}/400 draws certified, smallest gain {worst:.2f}"
    report(capsys, 2, not failures, detail, time.perf_counter() - t0, 30)


def test_criterion_3_boundedness(capsys):
    t0 = time.perf_counter()
    parts, ok = [], True
    opts = FitOptions(restarts=4)
    for kind, p in (("bidirected-path", 5), ("fig1b", None), ("experiment", 12)):
        g = make_graph(kind, p)
        n = mlt_zero_mean(g).threshold_zero_mean
        rep = boundedness_probe(g, n, 100, seed=3, opts=opts)
        bounded = all(
            e.loglik_value <= e.upper_bound + 1e-6 for e in rep.entries if e.converged
        )
        ok = ok and bounded and rep.divergent_rate == 0.0 and rep.converged_rate >= 0.95
        parts.append(f"{kind} n={n}: bounded={bounded} converged={rep.converged_rate:.2f}")
    report(capsys, 3, ok, "; ".join(parts), time.perf_counter() - t0, 300)


def test_criterion_4_worked_example(capsys):
    stats = sample_stats(np.array([[1.0, 1.0]]), zero_mean=True)
    g = make_graph("bidirected-path", 2)
    w = build_divergence_witness(g, stats)
    ok = np.allclose(w.q, [-1.0, 1.0]) and np.allclose(w.sigma_base, [[1.0, 1.0], [1.0, 2.0]])
    err = 0.0
    for t in (0.0, 1.0, 10.0, 100.0):
        err = max(err, abs(loglik(divergence_path(w, t), stats.cov) - (math.log1p(t) - 1.0)))
    report(capsys, 4, ok and err <= 1e-8, f"max deviation from log(1+t) - 1 is {err:.1e}")


def test_criterion_5_dag_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst, count = 0.0, 0
    while count < 100:
        p = int(rng.integers(2, 11))
        g = random_dag(rng, p, float(rng.uniform(0.2, 0.6)))
        if not g.directed:
            continue
        n = mlt_zero_mean(g).threshold_zero_mean + int(rng.integers(0, 5))
        s0 = sample_stats(rng.standard_normal((n, p)), zero_mean=True).cov
        general = fit_mle(g, s0).loglik_value
        oracle = fit_dag_mle(g, s0).loglik_value
        worst = max(worst, abs(general - oracle))
        count += 1
    report(capsys, 5, worst <= 1e-6, f"max |l_fit - l_dag| = {worst:.1e}", time.perf_counter() - t0, 120)


def test_criterion_6_gradient(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst, kinds = 0.0, set()
    for k in range(100):
        if k % 4 == 0:
            g = make_graph("directed-cycle", int(rng.integers(3, 8)))
        else:
            g = random_mixed(rng, int(rng.integers(2, 8)), 0.3, 0.3)
        if g.bidirected:
            kinds.add("bidirected")
        if not is_acyclic(g):
            kinds.add("cyclic")
        lam, om = random_params(rng, g)
        worst = max(worst, fd_check(g, lam, om, random_pd(rng, g.p)))
    detail = f"max relative error {worst:.1e} over 100 triples"
    report(capsys, 6, worst < 1e-5 and kinds == {"bidirected", "cyclic"}, detail, time.perf_counter() - t0, 60)


def test_criterion_7_cycle_concentration(capsys):
    rng = np.random.default_rng(7)
    worst, pattern_ok = 0.0, True
    for k in range(100):
        p = 4 + k % 5
        g = make_graph("directed-cycle", p)
        lam, _ = random_params(rng, g, lam_scale=1.5)
        om = NoiseCovariance(g, tuple(rng.uniform(0.3, 3.0, p)))
        got, expected = concentration(lam, om), cycle_closed_form(lam, om)
        worst = max(worst, float(np.abs(got - expected).max()))
        pattern_ok = pattern_ok and bool(np.all(got[expected == 0] == 0))
    g = make_graph("directed-cycle", 4)
    k4 = concentration(EdgeWeights(g, {e: 0.5 for e in g.directed}), NoiseCovariance.identity(g))
    instance = np.allclose(np.diag(k4), 1.25, atol=1e-12) and np.allclose(
        [k4[0, 1], k4[1, 2], k4[2, 3], k4[3, 0]], -0.5, atol=1e-12
    ) and k4[0, 2] == 0 and k4[1, 3] == 0
    ok = worst <= 1e-10 and pattern_ok and instance
    report(capsys, 7, ok, f"max entry error {worst:.1e}, zero pattern {pattern_ok}, 4-cycle instance {instance}")


@pytest.mark.slow
def test_criterion_8_power_replication(capsys):
    t0 = time.perf_counter()
    table = power_experiment(ExperimentConfig())
    sizes = {n: table.row(n, 0.0).rate for n in (15, 20, 25)}
    size_ok = all(0.01 <= s <= 0.12 for s in sizes.values())
    power_ok = all(
        min(table.row(n, 1.0).rate, table.row(n, -1.0).rate)
        > max(table.row(n, 0.25).rate, table.row(n, -0.25).rate)
        for n in (15, 20, 25)
    )
    valid = not table.metadata["invalid_rows"]
    detail = f"size {sizes}, power at |1| beats |0.25|: {power_ok}, all rows valid: {valid}"
    report(capsys, 8, size_ok and power_ok and valid, detail, time.perf_counter() - t0, 900)


def test_criterion_9_zero_pattern(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    mismatches, count = 0, 0
    while count < 100:
        g = random_mixed(rng, int(rng.integers(3, 9)), 0.35, 0.3)
        dec = bidirected_components(g)
        j = int(np.argmax([len(pa) for pa in dec.parent_closures]))
        gj, _ = component_subgraph(g, j)
        h, h_bi = reduction_subgraph(gj)
        lam, om = random_params(rng, h)
        sigma = covariance_from_params(lam, om).matrix
        for a in range(h.p):
            for b in range(a + 1, h.p):
                adjacent = (a + 1, b + 1) in h_bi.bidirected
                mismatches += (abs(sigma[a, b]) >= 1e-10) != adjacent
        count += 1
    report(capsys, 9, mismatches == 0, f"{mismatches} pattern mismatches in 100 instances", time.perf_counter() - t0, 10)


def _cli(args, threads):
    env = dict(os.environ, MLT_THREADS=str(threads))
    res = subprocess.run([sys.executable, "-m", "pathmlt.cli", *args], capture_output=True, env=env)
    return res.returncode, res.stdout


def test_criterion_10_cli_determinism(capsys, tmp_path):
    g = make_graph("fig1b")
    write_graph(g, tmp_path / "g.txt")
    write_graph(MixedGraph(6, g.directed - {(1, 2)}, g.bidirected), tmp_path / "null.txt")
    rng = np.random.default_rng(10)
    save_data_csv(rng.standard_normal((8, 6)), tmp_path / "x8.csv")
    save_data_csv(rng.standard_normal((3, 6)), tmp_path / "x3.csv")
    gfile, x8, x3 = str(tmp_path / "g.txt"), str(tmp_path / "x8.csv"), str(tmp_path / "x3.csv")
    commands = {
        "threshold": ["threshold", gfile, "--json"],
        "witness": ["witness", gfile, "--data", x3, "--json"],
        "fit": ["fit", gfile, "--data", x8, "--restarts", "3", "--seed", "11", "--json"],
        "lrt": ["lrt", gfile, str(tmp_path / "null.txt"), "--data", x8, "--restarts", "2", "--seed", "4", "--json"],
        "probe": ["probe", gfile, "--n", "4", "--reps", "5", "--seed", "2", "--json"],
        "power-json": ["power", "--p", "12", "--n", "6,8", "--grid", "0,1", "--reps", "4", "--json"],
        "power-csv": ["power", "--p", "12", "--n", "6,8", "--grid", "0,1", "--reps", "4"],
        "generate": ["generate", "--kind", "experiment", "--p", "20", "--json"],
    }
    differing = []
    for name, args in commands.items():
        outs = [_cli(args, 1), _cli(args, 1), _cli(args, 4)]
        if outs[0][0] != 0 or any(o != outs[0] for o in outs[1:]):
            differing.append(name)
        elif name != "power-csv":
            json.loads(outs[0][1])
    report(capsys, 10, not differing, f"{len(commands) - len(differing)}/{len(commands)} commands byte-identical, differing: {differing}")
