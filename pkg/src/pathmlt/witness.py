"""Certificates that the likelihood is unbounded when the sample size is below
the threshold.

A witness picks a bidirected component whose parent closure is larger than the
sample size, reduces it to a connected bidirected graph ``H`` whose covariance
matrices lie in the model, and builds

* ``q``: a kernel vector of the sample covariance with no zero coordinate;
* ``Sigma``: a matrix in ``PD(H)`` with ``Sigma q = c e_last``.

Along ``Sigma_t = Sigma - t/(1 + t a) (Sigma q)(Sigma q)^T`` (``a = q^T Sigma q``)
the inverse is ``K + t q q^T`` and the log-likelihood equals
``log(1 + t a) + b - trace_rest``, which grows without bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateDataError, GraphError, NoWitnessError
from .graph import (
    MixedGraph,
    bidirected_components,
    component_subgraph,
    peripheral_ordering,
    reduction_subgraph,
    suffix_connected,
)
from .model import CovarianceMatrix, SampleStats, is_pd, loglik, symmetrize

KERNEL_ZERO_TOL = 1e-10
KERNEL_RETRIES = 50
PIVOT_MIN = 1.0
COND_LIMIT = 1e12


def _effective_data(stats: SampleStats) -> tuple[NDArray, NDArray]:
    """Rows spanning the row space of the centring used, plus the matching covariance.

    With an unknown mean the centred rows sum to zero, so dropping the last one
    keeps the kernel.
    """
    if stats.zero_mean:
        return stats.data, stats.cov_zero_mean
    centered = stats.data - stats.mean
    return centered[:-1], stats.cov_centered


def allnonzero_kernel_vector(data, normalize: bool = True, seed: int = 0) -> NDArray:
    """Kernel vector of an ``n x m`` data matrix (``n < m``) with every entry nonzero.

    Solves ``X_1 u = -X_2 e`` where ``X_1`` holds ``n`` columns; the remaining
    coordinates are ``e`` (all ones, re-drawn from ``U(0.5, 1.5)`` if some ``u_i``
    vanishes). ``data`` may also be a ``SampleStats``.
    """
    if isinstance(data, SampleStats):
        data = _effective_data(data)[0]
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n, m = x.shape
    if n >= m:
        raise NoWitnessError(f"need fewer observations than columns, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    if n == 0:
        return np.ones(m)

    perm = np.arange(m)
    for _ in range(KERNEL_RETRIES):
        x1 = x[:, perm[:n]]
        if np.linalg.cond(x1) < COND_LIMIT:
            break
        perm = rng.permutation(m)
    else:
        raise DegenerateDataError("no invertible n x n column block found")
    x2 = x[:, perm[n:]]

    e = np.ones(m - n)
    for _ in range(KERNEL_RETRIES):
        u = -np.linalg.solve(x1, x2 @ e)
        q = np.empty(m)
        q[perm[:n]] = u
        q[perm[n:]] = e
        scale = np.abs(q).max()
        if np.all(np.abs(q) / scale > KERNEL_ZERO_TOL):
            return q / scale if normalize else q
        e = rng.uniform(0.5, 1.5, size=m - n)
    raise DegenerateDataError("could not find a kernel vector with all entries nonzero")


def _row_by_row(g: MixedGraph, q: NDArray, order: tuple[int, ...]) -> NDArray:
    p = g.p
    qq = q[np.asarray(order) - 1]
    s = np.zeros((p, p))
    for i in range(p):
        if i == 0:
            sigma_ii = 1.0
        else:
            b = s[:i, i]
            schur = float(b @ np.linalg.solve(s[:i, :i], b))
            sigma_ii = max(1.0, math.ceil(schur + PIVOT_MIN))
            while sigma_ii - schur < PIVOT_MIN:
                sigma_ii += 1.0
        s[i, i] = sigma_ii
        if i == p - 1:
            break
        vi = order[i]
        later = {order[k]: k for k in range(i + 1, p)}
        nbrs = [w for w in g.siblings(vi) if w in later]
        if not nbrs:  # pragma: no cover - excluded by suffix connectivity
            raise GraphError(f"vertex {vi} has no later neighbour")
        star = later[min(nbrs)]
        for w, k in later.items():
            if k != star:
                s[i, k] = s[k, i] = 1.0 if w in nbrs else 0.0
        rest = s[i] @ qq - s[i, star] * qq[star]
        s[i, star] = s[star, i] = -rest / qq[star]
    idx = np.asarray(order) - 1
    sigma = np.empty((p, p))
    sigma[np.ix_(idx, idx)] = s
    return sigma


def annihilating_covariance(
    g: MixedGraph, q: NDArray, ordering=None, balance: bool = True
) -> tuple[CovarianceMatrix, float]:
    """Build ``Sigma`` in ``PD(g)`` with ``(Sigma q)_v = 0`` for all but the last vertex of ``ordering``.

    Rows are filled in ordering position. The diagonal entry is the smallest
    natural number whose Schur pivot is at least 1 (so every leading minor is
    at least 1); entries to later neighbours are 1 except the one to ``i*``
    (the smallest-labelled later neighbour), which is solved for so that
    ``(Sigma q)_i = 0``.

    With ``balance`` the rows are built for ``sign(q)`` and the result is
    rescaled to ``D^{-1} Sigma D^{-1}`` with ``D = diag(|q|)``. The rescaling
    keeps the zero pattern and definiteness, and avoids dividing by small
    ``q`` entries.
    """
    if g.directed:
        raise GraphError("annihilating covariance needs a purely bidirected graph")
    q = np.asarray(q, dtype=float)
    if q.shape != (g.p,):
        raise ValueError(f"q must have length {g.p}")
    if np.any(q == 0):
        raise ValueError("q has a zero entry")
    order = tuple(ordering) if ordering is not None else peripheral_ordering(g)
    if not suffix_connected(g, order):
        raise GraphError("ordering is not suffix-connected")

    if balance:
        d_inv = 1.0 / np.abs(q)
        sigma = _row_by_row(g, np.sign(q), order) * np.outer(d_inv, d_inv)
    else:
        sigma = _row_by_row(g, q, order)
    last = order[-1] - 1
    c = float(sigma[last] @ q)
    return CovarianceMatrix(sigma), c


@dataclass(frozen=True, eq=False)
class DivergenceWitness:
    """A certified direction of unbounded likelihood.

    ``support`` lists the original vertex labels of ``Pa(C_j)``; ``q`` and
    ``sigma_base`` are indexed in that order, and ``last`` is the position with
    ``(Sigma q)_last = c``. ``pattern`` is the bidirected graph (on positions
    ``1..m``) whose zero pattern ``Sigma_t`` follows.
    """

    component_index: int
    p: int
    support: tuple[int, ...]
    q: NDArray
    sigma_base: NDArray
    c: float
    last: int
    slope: float
    offset: float
    trace_rest: float
    pattern: MixedGraph
    ordering: tuple[int, ...] = field(default=())

    @property
    def precision_base(self) -> NDArray:
        return symmetrize(np.linalg.inv(self.sigma_base))

    def t_exceeding(self, level: float) -> float:
        """A path parameter with ``loglik_along_path(t) > level``."""
        gap = level - self.offset + self.trace_rest
        if gap <= 0:
            return 0.0 if loglik_along_path(self, 0.0) > level else 1.0
        return 2.0 * math.expm1(gap) / self.slope + 1.0

    def to_dict(self) -> dict:
        return {
            "component_index": self.component_index,
            "p": self.p,
            "support": list(self.support),
            "q": self.q.tolist(),
            "sigma_base": self.sigma_base.tolist(),
            "c": self.c,
            "last_vertex": self.support[self.last],
            "slope": self.slope,
            "offset": self.offset,
            "trace_rest": self.trace_rest,
            "pattern_edges": [
                [self.support[i - 1], self.support[j - 1]] for i, j in self.pattern.sorted_bidirected()
            ],
            "ordering": [self.support[v - 1] for v in self.ordering],
            "closed_form": "loglik(t) = log(1 + slope*t) + offset - trace_rest",
        }


def _support_path(w: DivergenceWitness, t: float) -> NDArray:
    sig = np.array(w.sigma_base, dtype=float)
    coef = t / (1.0 + t * w.slope)
    sig[w.last, w.last] -= coef * w.c * w.c
    return sig


def divergence_path(w: DivergenceWitness, t: float) -> NDArray:
    """Full ``p x p`` matrix ``Sigma_t``; identity off the support."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    full = np.eye(w.p)
    idx = np.asarray(w.support) - 1
    full[np.ix_(idx, idx)] = _support_path(w, t)
    return full


def loglik_along_path(w: DivergenceWitness, t: float) -> float:
    return float(math.log1p(t * w.slope) + w.offset - w.trace_rest)


def _make_witness(j, p, support, pattern, order, q, sigma, c, s_full) -> DivergenceWitness:
    idx = np.asarray(support) - 1
    s_sub = s_full[np.ix_(idx, idx)]
    sig = sigma.matrix
    slope = float(q @ sig @ q)
    # -trace(K S_sub) + log det K, evaluated through a Cholesky factor of Sigma
    offset = loglik(sig, s_sub)
    trace_rest = float(np.trace(s_full) - np.trace(s_sub))
    last = int(order[-1]) - 1
    return DivergenceWitness(
        component_index=j,
        p=s_full.shape[0],
        support=tuple(int(v) for v in support),
        q=q,
        sigma_base=np.array(sig),
        c=float(c),
        last=last,
        slope=slope,
        offset=offset,
        trace_rest=trace_rest,
        pattern=pattern,
        ordering=tuple(order),
    )


def build_divergence_witness(g: MixedGraph, stats: SampleStats) -> DivergenceWitness:
    """Witness of unbounded likelihood for ``stats`` (needs ``n < threshold``).

    Uses ``S_0n`` when ``stats.zero_mean``, otherwise ``S_n`` with effective
    sample size ``n - 1``.
    """
    if stats.p != g.p:
        raise ValueError(f"data have {stats.p} columns, graph has p={g.p}")
    x_eff, s_full = _effective_data(stats)
    n_eff = x_eff.shape[0]
    dec = bidirected_components(g)
    candidates = [j for j, pa in enumerate(dec.parent_closures) if len(pa) > n_eff]
    if not candidates:
        raise NoWitnessError(
            f"effective sample size {n_eff} is at or above the threshold {max(dec.sizes())}"
        )
    j = candidates[0]
    gj, labels = component_subgraph(g, j)
    comp = {labels.index(v) + 1 for v in dec.components[j]}
    _, h_bi = reduction_subgraph(gj, comp)
    q = allnonzero_kernel_vector(x_eff[:, np.asarray(labels) - 1])
    order = peripheral_ordering(h_bi)
    sigma, c = annihilating_covariance(h_bi, q, order)
    return _make_witness(j, g.p, labels, h_bi, order, q, sigma, c, s_full)


# ---------------------------------------------------------------------------
# Verification

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float
    t: float | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "t": self.t, "passed": self.passed, "residual": self.residual}


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def worst(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c in self.checks:
            out[c.name] = max(out.get(c.name, 0.0), c.residual)
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "worst_residuals": self.worst(),
        }


KERNEL_TOL = 1e-8
ANNIHILATION_TOL = 1e-8
WOODBURY_TOL = 1e-8
CLOSED_FORM_TOL = 1e-6


def _pattern_in_model(w: DivergenceWitness, g: MixedGraph) -> bool:
    """Every pattern edge is a bidirected edge of ``g`` or a directed edge into the component."""
    for i, j in w.pattern.bidirected:
        a, b = w.support[i - 1], w.support[j - 1]
        if not ((min(a, b), max(a, b)) in g.bidirected or (a, b) in g.directed or (b, a) in g.directed):
            return False
    return True


def verify_witness(w: DivergenceWitness, g: MixedGraph, stats: SampleStats, t_grid) -> VerificationReport:
    """Check a witness numerically. An empty grid yields an empty report."""
    t_grid = sorted(float(t) for t in t_grid)
    if not t_grid:
        return VerificationReport(())
    _, s_full = _effective_data(stats)
    idx = np.asarray(w.support) - 1
    s_sub = s_full[np.ix_(idx, idx)]
    checks: list[Check] = []

    s_scale = max(np.abs(s_sub).max(), np.finfo(float).tiny)
    kres = float(np.abs(s_sub @ w.q).max() / s_scale)
    checks.append(Check("kernel", kres <= KERNEL_TOL, kres))
    qmin = float(np.abs(w.q).min() / np.abs(w.q).max())
    checks.append(Check("q_nonzero", qmin > KERNEL_ZERO_TOL, qmin))
    sq = w.sigma_base @ w.q
    others = np.delete(sq, w.last)
    ares = float(np.abs(others).max(initial=0.0))
    checks.append(Check("annihilation", ares <= ANNIHILATION_TOL and abs(sq[w.last]) > ANNIHILATION_TOL, ares))
    checks.append(Check("slope_positive", w.slope > 0, w.slope))
    checks.append(Check("pattern_in_model", _pattern_in_model(w, g) and suffix_connected(w.pattern, w.ordering), 0.0))

    allowed = np.eye(w.p, dtype=bool)
    for i, j in w.pattern.bidirected:
        a, b = idx[i - 1], idx[j - 1]
        allowed[a, b] = allowed[b, a] = True
    k = w.precision_base
    prev = -math.inf
    for t in t_grid:
        st = divergence_path(w, t)
        checks.append(Check("positive_definite", is_pd(st), 0.0, t))
        zres = float(np.abs(st[~allowed]).max(initial=0.0))
        checks.append(Check("zero_pattern", zres == 0.0, zres, t))
        kt = k + t * np.outer(w.q, w.q)
        wres = float(np.abs(np.linalg.inv(st[np.ix_(idx, idx)]) - kt).max() / np.abs(kt).max())
        checks.append(Check("woodbury", wres <= WOODBURY_TOL, wres, t))
        closed = loglik_along_path(w, t)
        direct = loglik(st, s_full) if is_pd(st) else -math.inf
        cres = abs(direct - closed)
        checks.append(Check("closed_form", cres <= CLOSED_FORM_TOL, cres, t))
        checks.append(Check("monotone", closed > prev, closed - prev if prev > -math.inf else 0.0, t))
        prev = closed
    return VerificationReport(tuple(checks))
