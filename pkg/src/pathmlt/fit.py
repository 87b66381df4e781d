"""Maximum likelihood fitting and the likelihood ratio test.

``fit_mle`` maximizes ``loglik(Sigma(Lambda, Omega) | S)`` by monotone
quasi-Newton ascent. Error-covariance blocks of bidirected components that are
cliques (including singletons) are profiled out in closed form,
``Omega_CC = [(I - Lambda)^T S (I - Lambda)]_CC``; the entries of non-clique
components are optimized directly, their diagonal on the log scale. Either way
the reported likelihood is that of an explicit ``(Lambda, Omega)`` pair, and
``gradient_norm`` is measured in the entries of ``Lambda`` and ``Omega``.

Deviance convention: ``loglik`` has ``n/2`` divided out, so the LRT statistic is
``n * (loglik_full - loglik_null)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from numpy.typing import NDArray
from scipy import special

from .errors import BelowThresholdError, GraphError, NonConvergenceError, RankError
from .graph import MixedGraph, bidirected_components, is_acyclic, mlt_zero_mean
from .model import (
    EdgeWeights,
    NoiseCovariance,
    SampleStats,
    is_pd,
    is_regular,
)


RANK_RTOL = 1e-10


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 1
    max_iter: int = 5000
    tol: float = 1e-6
    seed: int = 0
    quasi_newton: bool = True
    rel_tol: float = 1e-12


@dataclass(frozen=True, eq=False)
class FitResult:
    lam_hat: EdgeWeights
    om_hat: NoiseCovariance
    loglik_value: float
    converged: bool
    iterations: int
    restarts_used: int
    gradient_norm: float
    restart_index: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        from .model import params_to_dict

        return {
            "loglik_value": self.loglik_value,
            "converged": self.converged,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "restart_index": self.restart_index,
            "gradient_norm": self.gradient_norm,
            "parameters": params_to_dict(self.lam_hat, self.om_hat),
        }


@dataclass(frozen=True, eq=False)
class LrtResult:
    stat: float
    p_value: float
    df: int
    fit_full: FitResult
    fit_null: FitResult

    def to_dict(self) -> dict:
        return {
            "stat": self.stat,
            "p_value": self.p_value,
            "df": self.df,
            "fit_full": self.fit_full.to_dict(),
            "fit_null": self.fit_null.to_dict(),
        }


# ---------------------------------------------------------------------------
# Chi-square tail

def chi2_sf(x: float, df: int) -> float:
    """Upper tail ``P(chi2_df > x)``."""
    if x <= 0:
        return 1.0
    if df == 1:
        return math.erfc(math.sqrt(x / 2.0))
    return float(special.gammaincc(df / 2.0, x / 2.0))


def chi2_quantile(prob: float, df: int) -> float:
    """``x`` with ``P(chi2_df <= x) = prob``."""
    if df == 1:
        return 2.0 * float(special.erfcinv(1.0 - prob)) ** 2
    return 2.0 * float(special.gammainccinv(df / 2.0, 1.0 - prob))


# ---------------------------------------------------------------------------
# Objective

class _Objective:
    """Log-likelihood on the free parameter vector ``theta = (lambda, omega_free)``."""

    def __init__(self, g: MixedGraph, s: NDArray, profile: bool = True, log_diag: bool = False):
        self.g = g
        # free diagonal omega entries as logs: keeps them positive and rescales ridges
        self.log_diag = log_diag
        self.p = g.p
        self.s = np.asarray(s, dtype=float)
        self.edges = g.sorted_directed()
        self.rows = np.array([i - 1 for i, _ in self.edges], dtype=int)
        self.cols = np.array([j - 1 for _, j in self.edges], dtype=int)
        comps = [np.asarray(c) - 1 for c in bidirected_components(g).components]
        self.singles = np.array([c[0] for c in comps if len(c) == 1], dtype=int)
        self.blocks_profiled = []
        self.blocks_free = []
        for c in comps:
            if len(c) == 1:
                continue
            clique = all((a + 1, b + 1) in g.bidirected for a, b in combinations(c, 2))
            (self.blocks_profiled if profile and clique else self.blocks_free).append(c)
        if not profile:
            self.blocks_free = [c for c in comps if len(c) > 1]
            self.free_singles = self.singles
            self.singles = np.array([], dtype=int)
        else:
            self.free_singles = np.array([], dtype=int)
        # free omega entries: diagonals of free vertices, then off-diagonal edges inside free blocks
        free_vertices = sorted(
            [int(v) for v in self.free_singles] + [int(v) for c in self.blocks_free for v in c]
        )
        self.diag_idx = np.array(free_vertices, dtype=int)
        free_set = {int(v) for c in self.blocks_free for v in c}
        self.off_edges = [(i - 1, j - 1) for i, j in g.sorted_bidirected() if i - 1 in free_set]
        self.off_r = np.array([a for a, _ in self.off_edges], dtype=int)
        self.off_c = np.array([b for _, b in self.off_edges], dtype=int)
        self.n_lam = len(self.edges)
        self.n_om = len(self.diag_idx) + len(self.off_edges)
        self.dim = self.n_lam + self.n_om
        self.eye = np.eye(self.p)

    # -- packing -----------------------------------------------------------
    def lam_matrix(self, theta: NDArray) -> NDArray:
        lam = np.zeros((self.p, self.p))
        lam[self.rows, self.cols] = theta[: self.n_lam]
        return lam

    def omega_free_matrix(self, theta: NDArray) -> NDArray:
        om = np.zeros((self.p, self.p))
        w = theta[self.n_lam:]
        nd = len(self.diag_idx)
        om[self.diag_idx, self.diag_idx] = np.exp(w[:nd]) if self.log_diag else w[:nd]
        om[self.off_r, self.off_c] = w[nd:]
        om[self.off_c, self.off_r] = w[nd:]
        return om

    def pack(self, lam: NDArray, omega: NDArray) -> NDArray:
        diag = omega[self.diag_idx, self.diag_idx]
        return np.concatenate([
            lam[self.rows, self.cols],
            np.log(diag) if self.log_diag else diag,
            omega[self.off_r, self.off_c],
        ])

    def natural_gradient(self, theta: NDArray, grad: NDArray) -> NDArray:
        """Gradient in the entries of Omega themselves, undoing the log scale."""
        if not self.log_diag:
            return grad
        out = grad.copy()
        nd = len(self.diag_idx)
        out[self.n_lam: self.n_lam + nd] /= np.exp(theta[self.n_lam: self.n_lam + nd])
        return out

    def initial_omega(self) -> NDArray:
        return np.diag(np.diag(self.s))

    # -- evaluation --------------------------------------------------------
    def evaluate(self, theta: NDArray, want_grad: bool = True):
        """Return ``(loglik, gradient, omega)``, or ``None`` outside the feasible region."""
        lam = self.lam_matrix(theta)
        a = self.eye - lam
        sign, logabsdet = np.linalg.slogdet(a)
        # log|det| enters the objective, which is a barrier against singular I - Lambda
        if sign == 0 or not np.isfinite(logabsdet):
            return None
        sa = self.s @ a
        m = a.T @ sa
        with np.errstate(over="ignore"):
            omega = self.omega_free_matrix(theta)
        if not np.all(np.isfinite(omega)):
            return None
        w = np.zeros((self.p, self.p))
        value = 2.0 * logabsdet
        if len(self.singles):
            d = m[self.singles, self.singles]
            if np.any(d <= 0):
                return None
            omega[self.singles, self.singles] = d
            w[self.singles, self.singles] = 1.0 / d
            value -= np.log(d).sum() + len(self.singles)
        for c in self.blocks_profiled:
            blk = m[np.ix_(c, c)]
            blk = 0.5 * (blk + blk.T)
            try:
                chol = np.linalg.cholesky(blk)
            except np.linalg.LinAlgError:
                return None
            omega[np.ix_(c, c)] = blk
            inv = np.linalg.inv(chol)
            w[np.ix_(c, c)] = inv.T @ inv
            value -= 2.0 * np.log(np.diag(chol)).sum() + len(c)
        free = [np.array([v]) for v in self.free_singles] + list(self.blocks_free)
        for c in free:
            blk = omega[np.ix_(c, c)]
            try:
                chol = np.linalg.cholesky(blk)
            except np.linalg.LinAlgError:
                return None
            inv = np.linalg.inv(chol)
            wc = inv.T @ inv
            w[np.ix_(c, c)] = wc
            value -= 2.0 * np.log(np.diag(chol)).sum() + float(np.sum(wc * m[np.ix_(c, c)]))
        if not np.isfinite(value):
            return None
        if not want_grad:
            return value, None, omega
        grad_lam = -2.0 * np.linalg.inv(a).T + 2.0 * sa @ w
        grad = np.empty(self.dim)
        grad[: self.n_lam] = grad_lam[self.rows, self.cols]
        if self.n_om:
            g_om = -w + w @ m @ w
            nd = len(self.diag_idx)
            grad[self.n_lam: self.n_lam + nd] = g_om[self.diag_idx, self.diag_idx]
            if self.log_diag:
                grad[self.n_lam: self.n_lam + nd] *= omega[self.diag_idx, self.diag_idx]
            grad[self.n_lam + nd:] = 2.0 * g_om[self.off_r, self.off_c]
        return value, grad, omega


def loglik_gradient(g: MixedGraph, lam: EdgeWeights, om: NoiseCovariance, s0: NDArray):
    """Analytic gradient of the log-likelihood in every free parameter.

    Returns ``(grad_lambda, grad_omega)``: dicts keyed by directed edge and by
    ``(i, i)`` / bidirected edge ``(i, j)`` respectively.
    """
    obj = _Objective(g, s0, profile=False)
    theta = obj.pack(lam.matrix(), om.matrix())
    out = obj.evaluate(theta)
    if out is None:
        raise GraphError("parameters are outside the regular / positive definite region")
    _, grad, _ = out
    grad_lam = {e: float(v) for e, v in zip(obj.edges, grad[: obj.n_lam])}
    nd = len(obj.diag_idx)
    grad_om = {(int(v) + 1, int(v) + 1): float(x) for v, x in zip(obj.diag_idx, grad[obj.n_lam: obj.n_lam + nd])}
    for (a, b), x in zip(obj.off_edges, grad[obj.n_lam + nd:]):
        grad_om[(a + 1, b + 1)] = float(x)
    return grad_lam, grad_om


# ---------------------------------------------------------------------------
# Optimizer

@dataclass
class _Run:
    theta: NDArray
    value: float
    grad: NDArray
    omega: NDArray
    converged: bool
    iterations: int
    history: list[float]


def _line_search(obj: _Objective, x: NDArray, f: float, g: NDArray, d: NDArray):
    """Armijo backtracking; infeasible trial points count as failures."""
    slope = float(d @ g)
    step = 1.0
    for _ in range(60):
        out = obj.evaluate(x + step * d)
        if out is not None and out[0] >= f + 1e-4 * step * slope:
            return step, x + step * d, out
        step *= 0.5
    return None


def _ascend(obj: _Objective, theta0: NDArray, opts: FitOptions) -> _Run | None:
    """Monotone ascent by BFGS (or Barzilai-Borwein scaled gradient) steps."""
    start = obj.evaluate(theta0)
    if start is None:
        return None
    f, g, omega = start
    x = theta0.copy()
    history = [f]
    n = obj.dim
    if n == 0 or np.linalg.norm(g) < opts.tol:
        return _Run(x, f, g, omega, True, 0, history)
    h = np.eye(n)
    fresh = True
    scale = 1.0
    converged = False
    it = 0
    while it < opts.max_iter and not converged:
        it += 1
        if opts.quasi_newton:
            d = h @ g
            if d @ g <= 0:  # lost the ascent property; restart from the gradient
                h, fresh = np.eye(n), True
                d = g.copy()
        else:
            d = scale * g
        found = _line_search(obj, x, f, g, d)
        if found is None:
            if opts.quasi_newton and not fresh:
                h, fresh = np.eye(n), True
                continue
            break
        step, x_new, (f_new, g_new, omega_new) = found
        s_vec = x_new - x
        y_vec = g - g_new  # gradient difference of -f
        sy = float(s_vec @ y_vec)
        if opts.quasi_newton and sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            if fresh:
                h = np.eye(n) * (sy / float(y_vec @ y_vec))
                fresh = False
            rho = 1.0 / sy
            hy = h @ y_vec
            h = h - rho * (np.outer(s_vec, hy) + np.outer(hy, s_vec)) + (rho * rho * float(y_vec @ hy) + rho) * np.outer(s_vec, s_vec)
        elif not opts.quasi_newton and sy > 0:
            scale = sy / float(y_vec @ y_vec)
        change = f_new - f
        x, f, g, omega = x_new, f_new, g_new, omega_new
        history.append(f)
        if np.linalg.norm(g) < opts.tol or change <= opts.rel_tol * (1.0 + abs(f)):
            converged = True
    return _Run(x, f, g, omega, converged, it, history)


def _check_threshold(g: MixedGraph, s: NDArray) -> None:
    dec = bidirected_components(g)
    for j, pa in enumerate(dec.parent_closures):
        idx = np.asarray(pa) - 1
        blk = s[np.ix_(idx, idx)]
        eig = np.linalg.eigvalsh(blk) if len(idx) else np.ones(1)
        # numerically singular blocks count as singular: data of rank < |Pa(C_j)|
        if not is_pd(blk) or eig[0] <= RANK_RTOL * max(eig[-1], 0.0):
            raise BelowThresholdError(
                f"Pa(C_{j}) = {list(pa)} block of the sample covariance is singular; "
                "the sample size is below the threshold (build a divergence witness instead)"
            )


def _random_start(obj: _Objective, rng: np.random.Generator) -> NDArray:
    for _ in range(1000):
        lam = np.zeros((obj.p, obj.p))
        lam[obj.rows, obj.cols] = rng.uniform(-0.5, 0.5, size=obj.n_lam)
        if not is_regular(lam):
            continue
        omega = obj.initial_omega()
        scale = 0.1
        d = np.sqrt(np.diag(obj.s))
        pert = np.zeros_like(omega)
        for a_, b_ in obj.off_edges:
            pert[a_, b_] = pert[b_, a_] = rng.uniform(-1.0, 1.0) * d[a_] * d[b_]
        while not is_pd(omega + scale * pert):
            scale *= 0.5
        return obj.pack(lam, omega + scale * pert)
    raise NonConvergenceError("could not draw a regular starting point")


def _regression_start(obj: _Objective) -> NDArray | None:
    """Each node regressed on its directed parents, as if the graph were acyclic."""
    lam = np.zeros((obj.p, obj.p))
    omega = np.diag(np.diag(obj.s)).copy()
    for j in range(obj.p):
        pa = obj.rows[obj.cols == j]
        if len(pa) == 0:
            continue
        beta = np.linalg.lstsq(obj.s[np.ix_(pa, pa)], obj.s[pa, j], rcond=None)[0]
        resid = obj.s[j, j] - float(obj.s[pa, j] @ beta)
        if resid <= 1e-12 * obj.s[j, j]:
            return None
        lam[pa, j] = beta
        omega[j, j] = resid
    if not is_regular(lam):
        return None
    return obj.pack(lam, omega)


def _result(obj: _Objective, run: _Run, restarts_used: int, index: int) -> FitResult:
    g = obj.g
    lam = EdgeWeights.from_matrix(g, obj.lam_matrix(run.theta))
    om = NoiseCovariance.from_matrix(g, run.omega)
    return FitResult(
        lam_hat=lam,
        om_hat=om,
        loglik_value=float(run.value),
        converged=run.converged,
        iterations=run.iterations,
        restarts_used=restarts_used,
        gradient_norm=float(np.linalg.norm(obj.natural_gradient(run.theta, run.grad))),
        restart_index=index,
        history=tuple(run.history),
    )


def fit_mle(
    g: MixedGraph,
    s0: NDArray,
    opts: FitOptions | None = None,
    init: tuple[EdgeWeights, NoiseCovariance] | None = None,
    profile: bool = True,
) -> FitResult:
    """Best-of-restarts maximum likelihood fit.

    Restart 0 starts at ``Lambda = 0``, ``Omega = diag(S)``; restart ``r`` draws
    its start from ``default_rng([seed, r])``. Two more deterministic starts
    follow: node-wise regression on the directed parents, and ``init`` if given
    (used by ``lrt`` to warm-start one model at the other's fit). Raises
    ``NonConvergenceError`` (carrying the best run) when no start converges.
    """
    opts = opts or FitOptions()
    s = np.asarray(s0, dtype=float)
    if s.shape != (g.p, g.p):
        raise ValueError(f"covariance has shape {s.shape}, graph has p={g.p}")
    _check_threshold(g, s)
    obj = _Objective(g, s, profile=profile, log_diag=True)
    starts = [obj.pack(np.zeros((g.p, g.p)), obj.initial_omega())]
    for r in range(1, opts.restarts):
        starts.append(_random_start(obj, np.random.default_rng([opts.seed, r])))
    if obj.n_lam:
        reg = _regression_start(obj)
        if reg is not None:
            starts.append(reg)
    if init is not None:
        lam0, om0 = init
        starts.append(obj.pack(lam0.matrix(), om0.matrix()))
    best = None
    best_index = -1
    for k, theta0 in enumerate(starts):
        run = _ascend(obj, theta0, opts)
        if run is None:
            continue
        better = best is None or run.value > best.value or (
            run.value == best.value and run.converged and not best.converged
        )
        if better:
            best, best_index = run, k
    if best is None:
        raise NonConvergenceError("every start left the regular / positive definite region")
    result = _result(obj, best, len(starts), best_index)
    if not result.converged:
        raise NonConvergenceError(
            f"optimizer did not converge (gradient norm {result.gradient_norm:.3g})", best=result
        )
    return result


def fit_dag_mle(g: MixedGraph, s0: NDArray) -> FitResult:
    """Closed-form MLE of an acyclic digraph: one regression per node."""
    if g.bidirected or not is_acyclic(g):
        raise GraphError("fit_dag_mle needs an acyclic digraph")
    s = np.asarray(s0, dtype=float)
    lam = np.zeros((g.p, g.p))
    omega = np.zeros(g.p)
    for j in g.vertices:
        pa = np.asarray(g.parents(j), dtype=int) - 1
        if len(pa):
            spp = s[np.ix_(pa, pa)]
            if not is_pd(spp):
                raise RankError(j)
            beta = np.linalg.solve(spp, s[pa, j - 1])
            lam[pa, j - 1] = beta
            omega[j - 1] = s[j - 1, j - 1] - s[j - 1, pa] @ beta
        else:
            omega[j - 1] = s[j - 1, j - 1]
        if omega[j - 1] <= 0:
            raise RankError(j, f"residual variance of node {j} is not positive")
    om = NoiseCovariance(g, tuple(omega))
    value = float(-np.log(omega).sum() - g.p)
    return FitResult(
        lam_hat=EdgeWeights.from_matrix(g, lam),
        om_hat=om,
        loglik_value=value,
        converged=True,
        iterations=0,
        restarts_used=0,
        gradient_norm=0.0,
    )


# ---------------------------------------------------------------------------
# Likelihood ratio test

def _embed(null_fit: FitResult, g_full: MixedGraph) -> tuple[EdgeWeights, NoiseCovariance]:
    lam = EdgeWeights(g_full, {e: null_fit.lam_hat.values.get(e, 0.0) for e in g_full.directed})
    om = NoiseCovariance(
        g_full,
        null_fit.om_hat.diagonal,
        {e: null_fit.om_hat.off_diagonal.get(e, 0.0) for e in g_full.bidirected},
    )
    return lam, om


def _restrict(full_fit: FitResult, g_null: MixedGraph) -> tuple[EdgeWeights, NoiseCovariance]:
    lam = EdgeWeights(g_null, {e: full_fit.lam_hat.values[e] for e in g_null.directed})
    om = NoiseCovariance(
        g_null,
        full_fit.om_hat.diagonal,
        {e: full_fit.om_hat.off_diagonal[e] for e in g_null.bidirected},
    )
    return lam, om


def effective_n(stats: SampleStats) -> int:
    return stats.n if stats.zero_mean else stats.n - 1


def lrt(
    g_full: MixedGraph,
    g_null: MixedGraph,
    stats: SampleStats,
    opts: FitOptions | None = None,
    df: int | None = None,
) -> LrtResult:
    """Likelihood ratio test of ``g_null`` (edges removed) inside ``g_full``.

    ``stat = n (loglik_full - loglik_null)`` clamped at zero; calibrated by a
    chi-square with ``df`` degrees of freedom (default: number of removed
    edges, at least 1). The full model is also started from the null fit,
    and the null model once more from the full fit with the tested edges
    dropped, so that both maximizations see each other's best point.
    """
    if not g_null.is_subgraph_of(g_full):
        raise GraphError("null graph must be a subgraph of the full graph on the same vertices")
    opts = opts or FitOptions()
    threshold = mlt_zero_mean(g_full).threshold_zero_mean
    if effective_n(stats) < threshold:
        raise BelowThresholdError(
            f"n = {stats.n} is below the threshold "
            f"{threshold if stats.zero_mean else threshold + 1} of the full model"
        )
    if df is None:
        df = max(1, g_full.n_edges - g_null.n_edges)
    s = stats.cov
    fit_null = fit_mle(g_null, s, opts)
    fit_full = fit_mle(g_full, s, opts, init=_embed(fit_null, g_full))
    try:
        again = fit_mle(g_null, s, replace(opts, restarts=1), init=_restrict(fit_full, g_null))
    except NonConvergenceError:
        again = None
    if again is not None and again.loglik_value > fit_null.loglik_value:
        fit_null = again
    stat = max(0.0, stats.n * (fit_full.loglik_value - fit_null.loglik_value))
    return LrtResult(stat=stat, p_value=chi2_sf(stat, df), df=df, fit_full=fit_full, fit_null=fit_null)


def with_seed(opts: FitOptions, seed: int) -> FitOptions:
    return replace(opts, seed=seed)
