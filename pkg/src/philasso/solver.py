"""Penalized-likelihood solvers.

Two layers:

* weighted_lasso -- maximize ll(beta) - n*lam*sum_j f_j |beta_j| by cyclic
  coordinate descent (Gaussian: exact univariate updates on a running
  residual; logit: IRLS relinearization with CD on the weighted
  least-squares surrogate). Fits are KKT-certified in the original scale.

* phi_lasso_fit -- the taxonomy-adaptive outer loop: start from a plain
  LASSO, then repeatedly decompose the current estimate, set per-coefficient
  weights to the lineage scale products, and re-solve the weighted problem
  with factors 1/w until the coefficients stop moving.

Coefficients eliminated in one outer round re-enter the next one under a
unit penalty factor (weights of zeroed lineages reset to 1), so zeros are
revivable by design rather than locked. That choice can cycle for tuning
values near a coefficient's entry threshold; the outer loop then stops at
max_outer and returns the best-objective iterate, flagged non-converged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import decompose as dc
from . import glm
from .taxonomy import Taxonomy

__all__ = [
    "SolverOptions",
    "WeightedLassoProblem",
    "FitResult",
    "PhiLassoFit",
    "PathResult",
    "soft_threshold",
    "weighted_lasso",
    "phi_lasso_fit",
    "phi_lasso_path",
]


@dataclass(frozen=True)
class SolverOptions:
    inner_tol: float = 1e-8        # max abs coefficient change per CD sweep
    outer_tol: float = 1e-6        # max abs coefficient change per reweighting
    max_inner_sweeps: int = 10_000
    max_irls: int = 100
    max_outer: int = 50
    kkt_tol: float = 1e-6
    standardize: bool = True       # internal scaling; never changes the problem

    def __post_init__(self):
        for name in ("inner_tol", "outer_tol", "kkt_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_inner_sweeps", "max_irls", "max_outer"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class WeightedLassoProblem:
    data: glm.Dataset
    lam: float
    penalty_factors: np.ndarray
    options: SolverOptions = SolverOptions()

    def __post_init__(self):
        f = np.asarray(self.penalty_factors, dtype=np.float64).ravel()
        if f.shape != (self.data.p,):
            raise ValueError("penalty_factors must have length p")
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise ValueError("penalty_factors must be finite and positive")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be positive and finite")
        object.__setattr__(self, "penalty_factors", f)


@dataclass
class FitResult:
    beta: np.ndarray
    intercept: float
    converged: bool
    sweeps: int
    irls_iterations: int
    kkt_residual: float
    objective: float               # ll - n*lam*sum f_j |beta_j|


@dataclass
class PhiLassoFit:
    """Converged (or best-effort) taxonomy-adaptive fit at one tuning value."""

    beta: np.ndarray
    intercept: float
    lam: float
    decomposition: dc.Decomposition
    outer_iterations: int
    converged: bool
    objective: float               # ll - n*lam*||alpha||_1 at the equilibrium
    kkt_residual: float
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    objective_trace: tuple[float, ...] = ()

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


@dataclass
class PathResult:
    grid: tuple[float, ...]
    fits: list[PhiLassoFit | None]
    failures: list[tuple[float, str]]

    def __iter__(self):
        return iter(self.fits)

    def failure_message(self, lam: float) -> str:
        for g, msg in self.failures:
            if g == lam:
                return msg
        return ""


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0); gamma must be nonnegative."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def _kkt_residual(data, beta, intercept, lam, factors):
    """Worst subgradient violation of max ll - n*lam*sum f|b| at (beta, b)."""
    g = glm.gradient(data, beta, intercept)
    gb = g[: data.p] / data.n
    thr = lam * factors
    active = beta != 0
    res = 0.0
    if np.any(~active):
        res = max(res, float(np.max(np.abs(gb[~active]) - thr[~active], initial=0.0)))
    if np.any(active):
        res = max(res, float(np.max(np.abs(gb[active] - thr[active] * np.sign(beta[active])))))
    if data.intercept:
        res = max(res, abs(float(g[-1])) / data.n)
    return res


def _cd_cycle_py(X, t, sw, col_sq, thresholds, beta, r, b0, fit_intercept,
                 tol, max_sweeps):
    """Reference implementation of the CD cycle; see _cd_cycle."""
    p = X.shape[1]
    s0 = float(sw @ sw) if fit_intercept else 0.0
    sweeps = 0
    converged = False

    def sweep(idx):
        nonlocal b0
        delta = 0.0
        for j in idx:
            sj = col_sq[j]
            if sj <= 0.0:
                continue
            xj = X[:, j]
            bj = beta[j]
            z = xj @ r + sj * bj
            new = soft_threshold(z, thresholds[j]) / sj
            if new != bj:
                r[:] -= xj * (new - bj)
                d = abs(new - bj)
                if d > delta:
                    delta = d
                beta[j] = new
        if fit_intercept and s0 > 0:
            shift = float(sw @ r) / s0
            if shift != 0.0:
                b0 += shift
                r[:] -= sw * shift
        return delta

    all_idx = np.arange(p)
    while sweeps < max_sweeps:
        sweeps += 1
        if sweep(all_idx) < tol:
            converged = True
            break
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps and active.size:
            sweeps += 1
            if sweep(active) < tol:
                break
    return b0, sweeps, converged


try:  # compiled kernel; the pure-python cycle is the importable fallback
    from numba import njit

    @njit(cache=True)
    def _cd_cycle_jit(X, t, sw, col_sq, thresholds, beta, r, b0, fit_intercept,
                      tol, max_sweeps):  # pragma: no cover - exercised via wrapper
        n, p = X.shape
        s0 = 0.0
        if fit_intercept:
            for i in range(n):
                s0 += sw[i] * sw[i]
        sweeps = 0
        converged = False
        active = np.empty(p, dtype=np.intp)
        while sweeps < max_sweeps:
            sweeps += 1
            # full sweep
            delta = 0.0
            for j in range(p):
                sj = col_sq[j]
                if sj <= 0.0:
                    continue
                bj = beta[j]
                z = sj * bj
                for i in range(n):
                    z += X[i, j] * r[i]
                if z > thresholds[j]:
                    new = (z - thresholds[j]) / sj
                elif z < -thresholds[j]:
                    new = (z + thresholds[j]) / sj
                else:
                    new = 0.0
                if new != bj:
                    diff = new - bj
                    for i in range(n):
                        r[i] -= X[i, j] * diff
                    if abs(diff) > delta:
                        delta = abs(diff)
                    beta[j] = new
            if fit_intercept and s0 > 0.0:
                shift = 0.0
                for i in range(n):
                    shift += sw[i] * r[i]
                shift /= s0
                if shift != 0.0:
                    b0 += shift
                    for i in range(n):
                        r[i] -= sw[i] * shift
            if delta < tol:
                converged = True
                break
            # iterate the current active set until it stabilizes
            na = 0
            for j in range(p):
                if beta[j] != 0.0:
                    active[na] = j
                    na += 1
            while sweeps < max_sweeps and na > 0:
                sweeps += 1
                delta = 0.0
                for a in range(na):
                    j = active[a]
                    sj = col_sq[j]
                    if sj <= 0.0:
                        continue
                    bj = beta[j]
                    z = sj * bj
                    for i in range(n):
                        z += X[i, j] * r[i]
                    if z > thresholds[j]:
                        new = (z - thresholds[j]) / sj
                    elif z < -thresholds[j]:
                        new = (z + thresholds[j]) / sj
                    else:
                        new = 0.0
                    if new != bj:
                        diff = new - bj
                        for i in range(n):
                            r[i] -= X[i, j] * diff
                        if abs(diff) > delta:
                            delta = abs(diff)
                        beta[j] = new
                if fit_intercept and s0 > 0.0:
                    shift = 0.0
                    for i in range(n):
                        shift += sw[i] * r[i]
                    shift /= s0
                    if shift != 0.0:
                        b0 += shift
                        for i in range(n):
                            r[i] -= sw[i] * shift
                if delta < tol:
                    break
        return b0, sweeps, converged

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _cd_cycle(X, t, sw, thresholds, beta, b0, fit_intercept, tol, max_sweeps):
    """Cyclic CD for 0.5||t - X b - sw*b0||^2 + sum_j thresholds_j |b_j|.

    Full sweeps alternate with active-set sweeps until no coefficient moves
    more than tol in a full sweep. beta is updated in place; sw is the
    (possibly sqrt-weight) intercept column, ignored unless fit_intercept.
    Column order is fixed cyclic, so results are reproducible bit for bit.
    """
    X = np.asfortranarray(X)
    col_sq = np.einsum("ij,ij->j", X, X)
    beta[col_sq <= 0.0] = 0.0  # degenerate columns carry no signal
    r = t - X @ beta
    if fit_intercept:
        s0 = float(sw @ sw)
        if s0 > 0:
            b0 = float(sw @ (t - X @ beta)) / s0
        r = r - sw * b0
    fn = _cd_cycle_jit if _HAVE_NUMBA else _cd_cycle_py
    b0, sweeps, converged = fn(
        X, t, sw, col_sq, thresholds, beta, r, float(b0), bool(fit_intercept),
        float(tol), int(max_sweeps),
    )
    return beta, float(b0), int(sweeps), bool(converged)


def weighted_lasso(problem: WeightedLassoProblem, warm_start: np.ndarray | None = None) -> FitResult:
    """Solve max ll(beta) - n*lam*sum_j f_j |beta_j| (+ free intercept).

    Gaussian data is solved by coordinate descent directly; logit data by
    IRLS relinearizations with CD on each weighted least-squares surrogate,
    stopping when the true-likelihood KKT conditions hold at kkt_tol.
    Internal standardization (when enabled and an intercept is fitted) is a
    pure reparametrization: columns are centered/scaled and penalty factors
    divided by the column scales, so the reported optimum and its KKT
    certificate live on the original scale.
    """
    data, lam, factors, opt = (
        problem.data, problem.lam, problem.penalty_factors, problem.options,
    )
    n, p = data.n, data.p
    X, y = data.X, data.y

    beta0 = np.zeros(p) if warm_start is None else np.asarray(warm_start, dtype=np.float64).copy()
    if beta0.shape != (p,):
        raise ValueError("warm_start must have length p")

    center = np.zeros(p)
    scale = np.ones(p)
    if data.intercept and opt.standardize:
        center = X.mean(axis=0)
        sd = X.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
        X = (X - center) / scale
    Xw = X  # possibly reparametrized design
    # scaled coefficients are b_j = beta_j * s_j, so the per-coordinate
    # penalty weight becomes f_j / s_j and the problem is unchanged
    thresholds = n * lam * factors / scale

    b = beta0 * scale
    sweeps_total = 0
    irls_iters = 0

    if data.family == glm.GAUSSIAN:
        yw = y - y.mean() if (data.intercept and opt.standardize) else y
        ones = np.ones(n)
        b, b0, sweeps_total, cd_ok = _cd_cycle(
            Xw, yw, ones, thresholds, b, 0.0,
            fit_intercept=data.intercept and not opt.standardize,
            tol=opt.inner_tol, max_sweeps=opt.max_inner_sweeps,
        )
        beta = b / scale
        if data.intercept:
            if opt.standardize:
                intercept = float(y.mean() - center @ beta)
            else:
                intercept = b0
        else:
            intercept = 0.0
        converged = cd_ok
    else:
        # IRLS: relinearize, solve the weighted LS surrogate by CD on
        # sqrt(w)-scaled rows, repeat until the true KKT conditions hold.
        beta = beta0.copy()
        intercept = 0.0
        if data.intercept:
            ybar = min(max(float(y.mean()), 1e-12), 1 - 1e-12)
            intercept = math.log(ybar / (1 - ybar))
        b = beta * scale
        b0 = intercept + center @ beta
        converged = False
        for irls_iters in range(1, opt.max_irls + 1):
            eta = Xw @ b + b0
            w, z = glm.irls_working(data, eta)
            sw = np.sqrt(w)
            Xs = Xw * sw[:, None]
            zs = z * sw
            # intercept column handled explicitly inside the cycle
            bs, off, used, _ = _cd_cycle(
                Xs, zs, sw, thresholds, b.copy(), b0,
                fit_intercept=data.intercept,
                tol=opt.inner_tol, max_sweeps=opt.max_inner_sweeps,
            )
            sweeps_total += used
            delta = max(np.max(np.abs(bs - b), initial=0.0), abs(off - b0))
            b, b0 = bs, off
            beta = b / scale
            intercept = b0 - center @ beta if data.intercept else 0.0
            kkt = _kkt_residual(data, beta, intercept, lam, factors)
            if kkt <= opt.kkt_tol and delta < max(opt.inner_tol * 10, 1e-10):
                converged = True
                break

    kkt = _kkt_residual(data, beta, intercept, lam, factors)
    if data.family == glm.GAUSSIAN:
        converged = converged and kkt <= opt.kkt_tol
    obj = glm.log_likelihood(data, beta, intercept) - n * lam * float(factors @ np.abs(beta))
    if not math.isfinite(obj):
        raise FloatingPointError("non-finite objective; check the data for pathologies")
    return FitResult(
        beta=beta, intercept=float(intercept), converged=converged,
        sweeps=sweeps_total, irls_iterations=irls_iters,
        kkt_residual=kkt, objective=obj,
    )


def _phi_objective(data, beta, intercept, lam, decomp):
    """Single-penalty criterion value ll - n*lam*||alpha||_1 at the
    equilibrium decomposition of beta."""
    return glm.log_likelihood(data, beta, intercept) - data.n * lam * float(
        np.abs(decomp.alpha).sum()
    )


def phi_lasso_fit(
    data: glm.Dataset,
    taxonomy: Taxonomy,
    lam: float,
    options: SolverOptions = SolverOptions(),
    warm_start: np.ndarray | None = None,
) -> PhiLassoFit:
    """Adaptive-reweighting fit at one tuning value.

    Round 0 is a plain LASSO (unit penalty factors). Each later round
    decomposes the previous estimate, sets w to the lineage scale products
    (1 on vanished lineages), and re-solves with factors 1/w. Stops when no
    coefficient moves more than outer_tol between rounds; if max_outer is
    exhausted first, the iterate with the best criterion value is returned
    and flagged non-converged.
    """
    if taxonomy.p != data.p:
        raise ValueError(f"taxonomy covers {taxonomy.p} covariates, data has {data.p}")
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError("lam must be positive and finite")

    unit = np.ones(data.p)
    fit = weighted_lasso(WeightedLassoProblem(data, lam, unit, options), warm_start)
    decomp = dc.partial_inverse(fit.beta, taxonomy)
    trace = [_phi_objective(data, fit.beta, fit.intercept, lam, decomp)]
    best = (trace[0], fit, decomp)

    outer = 0
    converged = False
    prev_beta = None
    for outer in range(1, options.max_outer + 1):
        w = dc.weights_from_decomposition(decomp, taxonomy)
        new_fit = weighted_lasso(
            WeightedLassoProblem(data, lam, 1.0 / w, options), warm_start=fit.beta
        )
        delta = float(np.max(np.abs(new_fit.beta - fit.beta), initial=0.0))
        cycling = prev_beta is not None and bool(
            np.max(np.abs(new_fit.beta - prev_beta), initial=0.0) < options.outer_tol
        )
        prev_beta = fit.beta
        fit = new_fit
        decomp = dc.partial_inverse(fit.beta, taxonomy)
        trace.append(_phi_objective(data, fit.beta, fit.intercept, lam, decomp))
        if trace[-1] > best[0]:
            best = (trace[-1], fit, decomp)
        if delta < options.outer_tol:
            converged = True
            break
        if cycling:
            # an exact two-cycle (zero-revival flip-flop) never settles;
            # stop early and fall back to the best-objective iterate
            break

    if not converged:
        _, fit, decomp = best
    final_w = dc.weights_from_decomposition(decomp, taxonomy)
    return PhiLassoFit(
        beta=fit.beta,
        intercept=fit.intercept,
        lam=lam,
        decomposition=decomp,
        outer_iterations=outer,
        converged=converged and fit.converged,
        objective=_phi_objective(data, fit.beta, fit.intercept, lam, decomp),
        kkt_residual=fit.kkt_residual,
        weights=final_w,
        objective_trace=tuple(trace),
    )


def phi_lasso_path(
    data: glm.Dataset,
    taxonomy: Taxonomy,
    grid,
    options: SolverOptions = SolverOptions(),
) -> PathResult:
    """Fit a descending tuning-value path with warm starts.

    Warm starts only seed the inner solver, so each entry matches its
    cold-start optimum; per-value failures are collected, not fatal.
    """
    grid = [float(g) for g in grid]
    if any(g <= 0 for g in grid):
        raise ValueError("grid values must be positive")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly descending")
    fits: list[PhiLassoFit | None] = []
    failures: list[tuple[float, str]] = []
    warm = None
    for lam in grid:
        try:
            fit = phi_lasso_fit(data, taxonomy, lam, options, warm_start=warm)
        except Exception as exc:  # per-lambda isolation
            fits.append(None)
            failures.append((lam, f"{type(exc).__name__}: {exc}"))
            continue
        fits.append(fit)
        warm = fit.beta
    return PathResult(grid=tuple(grid), fits=fits, failures=failures)
