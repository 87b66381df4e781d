import dataclasses
import math

import numpy as np
import pytest

from pathmlt.errors import GraphError, NoWitnessError
from pathmlt.graph import MixedGraph, bidirected_components, component_subgraph, make_graph, reduction_subgraph
from pathmlt.model import covariance_from_params, is_pd, likelihood_upper_bound, loglik, sample_stats
from pathmlt.witness import (
    allnonzero_kernel_vector,
    annihilating_covariance,
    build_divergence_witness,
    divergence_path,
    loglik_along_path,
    verify_witness,
)

from conftest import random_mixed, random_params

T_GRID = (0.0, 1.0, 10.0, 1e3, 1e6)


def test_kernel_examples():
    np.testing.assert_allclose(allnonzero_kernel_vector(np.array([[1.0, 1.0]])), [-1.0, 1.0])
    np.testing.assert_allclose(allnonzero_kernel_vector(np.array([[1.0, 2.0, 3.0]]), normalize=False), [-5.0, 1.0, 1.0])
    q = allnonzero_kernel_vector(np.array([[1.0, 2.0, 3.0]]))
    assert np.abs(q).max() == pytest.approx(1.0)


def test_kernel_requires_fewer_rows_than_columns():
    with pytest.raises(NoWitnessError):
        allnonzero_kernel_vector(np.ones((3, 3)))


def test_kernel_retry_when_coordinate_vanishes():
    # with e = ones the first coordinate is -(1 - 1) = 0, forcing a re-draw
    x = np.array([[1.0, 1.0, -1.0]])
    q = allnonzero_kernel_vector(x)
    assert np.all(np.abs(q) > 1e-10)
    assert abs(x @ q).max() < 1e-12


def test_kernel_property(rng):
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(1, m))
        x = rng.standard_normal((n, m))
        q = allnonzero_kernel_vector(x)
        s = x.T @ x / n
        assert np.abs(s @ q).max() <= 1e-8 * np.abs(s).max()
        assert np.abs(q).min() > 1e-10


def test_annihilating_single_edge():
    g = make_graph("bidirected-path", 2)
    sigma, c = annihilating_covariance(g, np.array([-1.0, 1.0]))
    np.testing.assert_allclose(sigma.matrix, [[1, 1], [1, 2]])
    assert c == pytest.approx(1.0)
    np.testing.assert_allclose(sigma.matrix @ np.array([-1.0, 1.0]), [0.0, 1.0])


def test_annihilating_single_vertex():
    g = MixedGraph.from_edges(1)
    sigma, c = annihilating_covariance(g, np.array([0.7]), balance=False)
    np.testing.assert_allclose(sigma.matrix, [[1.0]])
    assert c == pytest.approx(0.7)
    sigma, c = annihilating_covariance(g, np.array([0.7]))
    assert c == pytest.approx(0.7 * sigma.matrix[0, 0])


def test_annihilating_path_pattern():
    g = make_graph("bidirected-path", 3)
    q = np.ones(3)
    sigma, c = annihilating_covariance(g, q)
    assert sigma.matrix[0, 2] == 0.0
    sq = sigma.matrix @ q
    np.testing.assert_allclose(sq[:2], 0.0, atol=1e-14)
    assert sq[2] == pytest.approx(c) and c != 0
    for k in range(1, 4):
        assert np.linalg.det(sigma.matrix[:k, :k]) > 0


def test_annihilating_rejects_bad_input():
    g = make_graph("bidirected-path", 3)
    with pytest.raises(ValueError):
        annihilating_covariance(g, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(GraphError):
        annihilating_covariance(g, np.ones(3), ordering=(2, 1, 3))


def test_annihilation_property(rng):
    for _ in range(300):
        p = int(rng.integers(1, 8))
        edges = {(int(rng.integers(1, v)), v) for v in range(2, p + 1)}
        edges |= {(i, j) for i in range(1, p + 1) for j in range(i + 1, p + 1) if rng.random() < 0.3}
        g = MixedGraph.from_edges(p, (), edges)
        q = rng.uniform(0.2, 2.0, p) * rng.choice([-1, 1], p)
        sigma, c = annihilating_covariance(g, q)
        m = sigma.matrix
        sq = m @ q
        nonzero = np.flatnonzero(np.abs(sq) > 1e-8)
        assert len(nonzero) == 1 and abs(c) > 1e-8
        for i in range(p):
            for j in range(i + 1, p):
                if (i + 1, j + 1) not in g.bidirected:
                    assert m[i, j] == 0.0
        assert all(np.linalg.det(m[:k, :k]) > 0 for k in range(1, p + 1))


def worked_example():
    stats = sample_stats(np.array([[1.0, 1.0]]), zero_mean=True)
    g = make_graph("bidirected-path", 2)
    return g, stats, build_divergence_witness(g, stats)


def test_worked_example_closed_form():
    g, stats, w = worked_example()
    np.testing.assert_allclose(w.q, [-1.0, 1.0])
    np.testing.assert_allclose(w.sigma_base, [[1.0, 1.0], [1.0, 2.0]])
    assert w.c == pytest.approx(1.0)
    for t in (0.0, 1.0, 10.0, 100.0):
        expected = math.log1p(t) - 1.0
        assert loglik_along_path(w, t) == pytest.approx(expected, abs=1e-12)
        assert loglik(divergence_path(w, t), stats.cov) == pytest.approx(expected, abs=1e-8)


def test_worked_example_precision_path():
    _, _, w = worked_example()
    for t in (0.0, 1.0, 10.0, 1e3):
        k_t = np.linalg.inv(divergence_path(w, t))
        np.testing.assert_allclose(k_t, [[2 + t, -1 - t], [-1 - t, 1 + t]], rtol=1e-9)
    np.testing.assert_array_equal(divergence_path(w, 0.0), w.sigma_base)
    with pytest.raises(ValueError):
        divergence_path(w, -1.0)


def test_fig1b_selects_last_component(rng):
    g = make_graph("fig1b")
    stats = sample_stats(rng.standard_normal((3, 6)), zero_mean=True)
    w = build_divergence_witness(g, stats)
    assert w.component_index == 3
    assert w.support == (3, 4, 5, 6)
    assert verify_witness(w, g, stats, T_GRID).passed


def test_no_witness_at_threshold(rng):
    g = make_graph("bidirected-path", 5)
    with pytest.raises(NoWitnessError):
        build_divergence_witness(g, sample_stats(rng.standard_normal((5, 5)), zero_mean=True))


@pytest.mark.parametrize("kind, p, n", [("bidirected-path", 5, 3), ("bidirected-path", 5, 4), ("fig1b", None, 3), ("experiment", 12, 3)])
def test_witness_suite(kind, p, n):
    g = make_graph(kind, p)
    for r in range(20):
        stats = sample_stats(np.random.default_rng([11, r]).standard_normal((n, g.p)), zero_mean=True)
        w = build_divergence_witness(g, stats)
        report = verify_witness(w, g, stats, T_GRID)
        assert report.passed, report.failures()
        assert loglik_along_path(w, 1e6) - loglik_along_path(w, 0.0) >= 10


def test_witness_with_unknown_mean(rng):
    g = make_graph("bidirected-path", 5)
    stats = sample_stats(rng.standard_normal((5, 5)))  # centered: effective n = 4
    w = build_divergence_witness(g, stats)
    assert verify_witness(w, g, stats, T_GRID).passed


def test_witness_exceeds_any_level(rng):
    g = make_graph("fig1b")
    stats = sample_stats(rng.standard_normal((3, 6)), zero_mean=True)
    w = build_divergence_witness(g, stats)
    for level in (0.0, 50.0, 500.0):
        t = w.t_exceeding(level)
        assert loglik_along_path(w, t) > level
    # the witness beats any finite value achievable inside a bounded model
    bigger = sample_stats(rng.standard_normal((4, 6)), zero_mean=True)
    bound = likelihood_upper_bound(g, bigger.cov)
    assert math.isfinite(bound)
    assert loglik_along_path(w, w.t_exceeding(bound)) > bound


def test_divergence_path_keeps_pattern_and_identity(rng):
    g = make_graph("fig1b")
    stats = sample_stats(rng.standard_normal((3, 6)), zero_mean=True)
    w = build_divergence_witness(g, stats)
    base = divergence_path(w, 0.0)
    for t in (1.0, 10.0, 1e3):
        st = divergence_path(w, t)
        assert np.all(st[base == 0] == 0)
        assert is_pd(st)
    off = [v - 1 for v in range(1, 7) if v not in w.support]
    np.testing.assert_array_equal(base[np.ix_(off, off)], np.eye(len(off)))


def test_tampered_witness_fails_kernel_check(rng):
    g = make_graph("bidirected-path", 5)
    stats = sample_stats(rng.standard_normal((3, 5)), zero_mean=True)
    w = build_divergence_witness(g, stats)
    bad = dataclasses.replace(w, q=w.q + 0.1)
    report = verify_witness(bad, g, stats, T_GRID)
    assert not report.passed
    assert "kernel" in {c.name for c in report.failures()}


def test_empty_grid_gives_empty_report():
    g, stats, w = worked_example()
    report = verify_witness(w, g, stats, [])
    assert report.checks == () and report.passed


def test_witness_serializes():
    _, _, w = worked_example()
    d = w.to_dict()
    assert d["support"] == [1, 2] and d["last_vertex"] == 2
    assert d["slope"] == pytest.approx(1.0)


def test_reduction_zero_pattern(rng):
    count = 0
    while count < 100:
        g = random_mixed(rng, int(rng.integers(3, 8)), 0.35, 0.3)
        dec = bidirected_components(g)
        j = int(np.argmax([len(pa) for pa in dec.parent_closures]))
        gj, _ = component_subgraph(g, j)
        h, h_bi = reduction_subgraph(gj)
        lam, om = random_params(rng, h)
        sigma = covariance_from_params(lam, om).matrix
        for a in range(h.p):
            for b in range(a + 1, h.p):
                adjacent = (a + 1, b + 1) in h_bi.bidirected
                assert (abs(sigma[a, b]) >= 1e-10) == adjacent
        count += 1
