import numpy as np
import pytest
from hypothesis import strategies as st

from pathmlt.graph import MixedGraph


@st.composite
def mixed_graphs(draw, min_p=1, max_p=7, directed=True, bidirected=True, acyclic=False):
    p = draw(st.integers(min_p, max_p))
    pairs = [(i, j) for i in range(1, p + 1) for j in range(1, p + 1) if i != j]
    d = []
    if directed:
        cand = [(i, j) for i, j in pairs if i < j] if acyclic else pairs
        d = draw(st.lists(st.sampled_from(cand), unique=True, max_size=2 * p)) if cand else []
        if acyclic:
            perm = draw(st.permutations(range(1, p + 1)))
            d = [(perm[i - 1], perm[j - 1]) for i, j in d]
    b = []
    if bidirected:
        cand = [(i, j) for i, j in pairs if i < j]
        b = draw(st.lists(st.sampled_from(cand), unique=True, max_size=p)) if cand else []
    return MixedGraph.from_edges(p, d, b)


def random_dag(rng: np.random.Generator, p: int, prob: float = 0.4) -> MixedGraph:
    perm = rng.permutation(p) + 1
    edges = [(int(perm[a]), int(perm[b])) for a in range(p) for b in range(a + 1, p) if rng.random() < prob]
    return MixedGraph.from_edges(p, edges)


def random_mixed(rng: np.random.Generator, p: int, pd: float = 0.3, pb: float = 0.25) -> MixedGraph:
    d = [(i, j) for i in range(1, p + 1) for j in range(1, p + 1) if i != j and rng.random() < pd]
    b = [(i, j) for i in range(1, p + 1) for j in range(i + 1, p + 1) if rng.random() < pb]
    return MixedGraph.from_edges(p, d, b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_pd(rng: np.random.Generator, p: int, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((p, p + 2))
    return scale * (a @ a.T) / (p + 2) + 0.1 * np.eye(p)


def random_params(rng: np.random.Generator, g: MixedGraph, lam_scale: float = 0.5):
    """Random regular Lambda and positive definite Omega supported on ``g``."""
    from pathmlt.model import EdgeWeights, NoiseCovariance, is_regular

    while True:
        lam = EdgeWeights(g, {e: float(rng.uniform(-lam_scale, lam_scale)) for e in g.directed})
        if is_regular(lam.matrix()):
            break
    diag = rng.uniform(0.5, 2.0, size=g.p)
    off = {}
    for i, j in g.bidirected:
        off[(i, j)] = float(rng.uniform(-0.3, 0.3) * np.sqrt(diag[i - 1] * diag[j - 1]))
    om_mat = np.diag(diag)
    for (i, j), v in off.items():
        om_mat[i - 1, j - 1] = om_mat[j - 1, i - 1] = v
    # shrink off-diagonals until positive definite
    while np.linalg.eigvalsh(om_mat)[0] <= 1e-3:
        off = {k: 0.5 * v for k, v in off.items()}
        om_mat = np.diag(diag)
        for (i, j), v in off.items():
            om_mat[i - 1, j - 1] = om_mat[j - 1, i - 1] = v
    return lam, NoiseCovariance(g, tuple(diag), off)
