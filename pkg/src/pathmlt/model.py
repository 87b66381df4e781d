"""Parameter-to-covariance map, Gaussian log-likelihood, and the profile
likelihood / upper bound used to certify boundedness.

The log-likelihood has the additive constant dropped and ``n/2`` divided out::

    loglik(Sigma | S) = -log det(Sigma) - trace(Sigma^{-1} S)

Edge weights follow the convention ``X = Lambda^T X + eps``: ``Lambda[i, j]`` is
the coefficient of edge ``i -> j``. Matrices are indexed 0-based, vertices 1-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DefinitenessError,
    GraphError,
    NotSaturatedError,
    ProfileUndefinedError,
    RegularityError,
)
from .graph import MixedGraph, bidirected_components, is_saturated

REGULARITY_RTOL = 1e-12


# ---------------------------------------------------------------------------
# Small linear algebra helpers

def is_pd(m: NDArray) -> bool:
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.isfinite(m)))


def symmetrize(m: NDArray) -> NDArray:
    return 0.5 * (m + m.T)


def is_regular(lam: NDArray) -> bool:
    """``sigma_min(I - Lambda) > 1e-12 sigma_max(I - Lambda)``."""
    a = np.eye(lam.shape[0]) - lam
    if not np.all(np.isfinite(a)):
        return False
    sv = np.linalg.svd(a, compute_uv=False)
    return bool(sv[-1] > REGULARITY_RTOL * sv[0])


def _check_regular(lam: NDArray) -> None:
    if not is_regular(lam):
        raise RegularityError("I - Lambda is singular")


def _cholesky(m: NDArray, what: str = "matrix") -> NDArray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise DefinitenessError(f"{what} is not positive definite") from None


# ---------------------------------------------------------------------------
# Domain types

@dataclass(frozen=True)
class EdgeWeights:
    """Coefficients ``lambda_ij`` on the directed edges of ``graph``."""

    graph: MixedGraph
    values: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        vals = {(int(i), int(j)): float(v) for (i, j), v in dict(self.values).items()}
        extra = set(vals) - self.graph.directed
        if extra:
            raise GraphError(f"edge weights on non-edges {sorted(extra)}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def regular(cls, graph: MixedGraph, values: Mapping[tuple[int, int], float]) -> EdgeWeights:
        lam = cls(graph, values)
        _check_regular(lam.matrix())
        return lam

    @classmethod
    def zeros(cls, graph: MixedGraph) -> EdgeWeights:
        return cls(graph, {e: 0.0 for e in graph.directed})

    @classmethod
    def from_matrix(cls, graph: MixedGraph, lam: NDArray) -> EdgeWeights:
        return cls(graph, {(i, j): float(lam[i - 1, j - 1]) for i, j in graph.directed})

    def matrix(self) -> NDArray:
        p = self.graph.p
        lam = np.zeros((p, p))
        for (i, j), v in self.values.items():
            lam[i - 1, j - 1] = v
        return lam

    def is_regular(self) -> bool:
        return is_regular(self.matrix())


@dataclass(frozen=True)
class NoiseCovariance:
    """Error covariance ``Omega`` supported on the diagonal and the bidirected edges."""

    graph: MixedGraph
    diagonal: tuple[float, ...]
    off_diagonal: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        diag = tuple(float(d) for d in self.diagonal)
        if len(diag) != self.graph.p:
            raise GraphError(f"expected {self.graph.p} diagonal entries, got {len(diag)}")
        off = {}
        for (i, j), v in dict(self.off_diagonal).items():
            key = (min(int(i), int(j)), max(int(i), int(j)))
            if key not in self.graph.bidirected:
                raise GraphError(f"noise covariance on non-edge {key}")
            off[key] = float(v)
        object.__setattr__(self, "diagonal", diag)
        object.__setattr__(self, "off_diagonal", off)
        _cholesky(self.matrix(), "noise covariance")

    @classmethod
    def identity(cls, graph: MixedGraph) -> NoiseCovariance:
        return cls(graph, (1.0,) * graph.p)

    @classmethod
    def from_matrix(cls, graph: MixedGraph, omega: NDArray) -> NoiseCovariance:
        return cls(
            graph,
            tuple(np.diag(omega)),
            {(i, j): float(omega[i - 1, j - 1]) for i, j in graph.bidirected},
        )

    def matrix(self) -> NDArray:
        om = np.diag(np.asarray(self.diagonal, dtype=float))
        for (i, j), v in self.off_diagonal.items():
            om[i - 1, j - 1] = om[j - 1, i - 1] = v
        return om


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Symmetric positive definite ``Sigma`` with a lazily cached inverse."""

    matrix: NDArray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"covariance must be square, got shape {m.shape}")
        m = symmetrize(m)
        _cholesky(m, "covariance matrix")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def inverse(self) -> NDArray:
        k = symmetrize(np.linalg.inv(self.matrix))
        k.setflags(write=False)
        return k


@dataclass(frozen=True, eq=False)
class SampleStats:
    n: int
    p: int
    data: NDArray
    mean: NDArray
    cov_centered: NDArray
    cov_zero_mean: NDArray
    zero_mean: bool = False

    @property
    def cov(self) -> NDArray:
        """The covariance the likelihood is evaluated at (``S_0n`` or ``S_n``)."""
        return self.cov_zero_mean if self.zero_mean else self.cov_centered


def _as_matrix(sigma) -> NDArray:
    return sigma.matrix if isinstance(sigma, CovarianceMatrix) else np.asarray(sigma, dtype=float)


# ---------------------------------------------------------------------------
# Operations

def covariance_array(lam: NDArray, omega: NDArray) -> NDArray:
    """``(I - Lambda)^{-T} Omega (I - Lambda)^{-1}`` on raw arrays (no checks)."""
    p = lam.shape[0]
    a_inv = np.linalg.inv(np.eye(p) - lam)
    return symmetrize(a_inv.T @ omega @ a_inv)


def covariance_from_params(lam: EdgeWeights, om: NoiseCovariance) -> CovarianceMatrix:
    if lam.graph.p != om.graph.p:
        raise GraphError("edge weights and noise covariance live on different graphs")
    lmat = lam.matrix()
    _check_regular(lmat)
    omat = om.matrix()
    _cholesky(omat, "noise covariance")
    return CovarianceMatrix(covariance_array(lmat, omat))


def concentration(lam: EdgeWeights, om: NoiseCovariance) -> NDArray:
    """``Sigma^{-1} = (I - Lambda) Omega^{-1} (I - Lambda)^T``."""
    lmat = lam.matrix()
    _check_regular(lmat)
    omat = om.matrix()
    chol = _cholesky(omat, "noise covariance")
    a = np.eye(lmat.shape[0]) - lmat
    # Omega^{-1} = L^{-T} L^{-1}
    b = np.linalg.solve(chol, a.T)
    return symmetrize(b.T @ b)


def loglik(sigma, s: NDArray) -> float:
    """``-log det(Sigma) - trace(Sigma^{-1} S)``."""
    m = _as_matrix(sigma)
    chol = _cholesky(m, "Sigma")
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    w = np.linalg.solve(chol, np.asarray(s, dtype=float))
    w = np.linalg.solve(chol, w.T)
    return float(-logdet - np.trace(w))


def loglik_with_mean(mu: NDArray, sigma, stats: SampleStats) -> float:
    m = _as_matrix(sigma)
    d = stats.mean - np.asarray(mu, dtype=float)
    chol = _cholesky(m, "Sigma")
    z = np.linalg.solve(chol, d)
    return loglik(m, stats.cov_centered) - float(z @ z)


def sample_stats(data: NDArray, zero_mean: bool = False) -> SampleStats:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"data must be a non-empty n x p matrix, got shape {x.shape}")
    n, p = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    s_n = symmetrize(centered.T @ centered / n)
    s_0 = symmetrize(x.T @ x / n)
    return SampleStats(n=n, p=p, data=x, mean=mean, cov_centered=s_n, cov_zero_mean=s_0, zero_mean=zero_mean)


def _require_saturated(g: MixedGraph) -> None:
    if not is_saturated(g):
        raise NotSaturatedError("graph has non-clique bidirected components; apply saturate() first")


def _residual_moments(lam: EdgeWeights, s0: NDArray) -> NDArray:
    lmat = lam.matrix()
    _check_regular(lmat)
    a = np.eye(lmat.shape[0]) - lmat
    return symmetrize(a.T @ np.asarray(s0, dtype=float) @ a)


def profile_omega_blocks(g: MixedGraph, lam: EdgeWeights, s0: NDArray) -> list[NDArray]:
    """Blocks ``[(I - Lambda)^T S (I - Lambda)]_{C_j, C_j}`` maximizing over Omega."""
    _require_saturated(g)
    m = _residual_moments(lam, s0)
    out = []
    for comp in bidirected_components(g).components:
        idx = np.asarray(comp) - 1
        out.append(m[np.ix_(idx, idx)])
    return out


def profile_loglik(g: MixedGraph, lam: EdgeWeights, s0: NDArray) -> float:
    _require_saturated(g)
    lmat = lam.matrix()
    _check_regular(lmat)
    p = g.p
    _, logabsdet = np.linalg.slogdet(np.eye(p) - lmat)
    total = 2.0 * logabsdet - p
    for j, block in enumerate(profile_omega_blocks(g, lam, s0)):
        sign, ld = np.linalg.slogdet(block)
        if sign <= 0 or not is_pd(block):
            raise ProfileUndefinedError(j)
        total -= ld
    return float(total)


def likelihood_upper_bound(g: MixedGraph, s0: NDArray) -> float:
    """``-p - sum_j |C_j| log lambda_min(S_{Pa(C_j), Pa(C_j)})``; ``inf`` if any block is singular."""
    s0 = np.asarray(s0, dtype=float)
    dec = bidirected_components(g)
    total = -float(g.p)
    for comp, pa in zip(dec.components, dec.parent_closures):
        idx = np.asarray(pa) - 1
        block = s0[np.ix_(idx, idx)]
        if not is_pd(block):
            return float("inf")
        lam_min = np.linalg.eigvalsh(block)[0]
        if lam_min <= 0:
            return float("inf")
        total -= len(comp) * np.log(lam_min)
    return float(total)


# ---------------------------------------------------------------------------
# Interchange formats

def params_to_dict(lam: EdgeWeights, om: NoiseCovariance) -> dict:
    return {
        "p": lam.graph.p,
        "lambda": [[i, j, v] for (i, j), v in sorted(lam.values.items())],
        "omega_diag": list(om.diagonal),
        "omega_off": [[i, j, v] for (i, j), v in sorted(om.off_diagonal.items())],
    }


def params_from_dict(g: MixedGraph, d: Mapping) -> tuple[EdgeWeights, NoiseCovariance]:
    if int(d["p"]) != g.p:
        raise GraphError(f"parameter file has p={d['p']}, graph has p={g.p}")
    lam = EdgeWeights(g, {(int(i), int(j)): v for i, j, v in d.get("lambda", [])})
    om = NoiseCovariance(g, d["omega_diag"], {(int(i), int(j)): v for i, j, v in d.get("omega_off", [])})
    return lam, om


def dump_params(lam: EdgeWeights, om: NoiseCovariance) -> str:
    return json.dumps(params_to_dict(lam, om), indent=2)


def load_data_csv(path) -> NDArray:
    """One observation per row, comma separated, no header."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: no data")
    return data


def save_data_csv(data: NDArray, path) -> None:
    np.savetxt(path, np.asarray(data), delimiter=",", fmt="%.17g")
