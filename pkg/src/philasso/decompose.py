"""Coefficient decomposition along lineages.

A coefficient vector beta factors as beta_j = alpha_j * prod_t d_{tau(t,j)}
where tau(t,j) is covariate j's taxon at grouping level t. Among all such
factorizations of a fixed beta, exactly one minimizes the combined penalty
sum_t sum_tau d_tau^q + ||alpha||_q^q: the one satisfying the mass-equilibrium
condition

    d_tau^q = sum_{j in tau} |alpha_j|^q      for every taxon tau.

partial_inverse() computes that point; weights() turns it into the adaptive
penalty weights w_j = prod_t d_{tau(t,j)} used by the reweighted solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import Taxonomy

__all__ = [
    "Decomposition",
    "DecompositionError",
    "compose",
    "partial_inverse",
    "weights",
    "weights_from_decomposition",
    "penalty_decomposed",
    "penalty_weighted",
]

DEFAULT_TOL = 1e-12
MAX_SWEEPS = 10_000


class DecompositionError(RuntimeError):
    """Fixed-point iteration failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Decomposition:
    """A (D, alpha) pair: per-taxon nonnegative scales and per-covariate signs.

    d holds one array per grouping level, indexed by taxon order within the
    level. residual/sweeps record how tightly the mass-equilibrium condition
    held when the object came out of partial_inverse (0 for hand-built ones).
    """

    d: tuple[np.ndarray, ...]
    alpha: np.ndarray
    q: float = 1.0
    residual: float = 0.0
    sweeps: int = 0

    @property
    def depth(self) -> int:
        return len(self.d)

    def d_by_taxon(self) -> dict[tuple[int, int], float]:
        """Flat taxon-id -> value view of the per-level scale arrays."""
        out = {}
        for t, arr in enumerate(self.d, start=1):
            for k, v in enumerate(arr):
                out[(t, k)] = float(v)
        return out


def _check_dims(decomp: Decomposition, taxonomy: Taxonomy) -> None:
    if decomp.depth != taxonomy.depth:
        raise ValueError(
            f"decomposition has {decomp.depth} grouping levels, "
            f"taxonomy has {taxonomy.depth}"
        )
    if decomp.alpha.shape != (taxonomy.p,):
        raise ValueError(
            f"alpha has shape {decomp.alpha.shape}, expected ({taxonomy.p},)"
        )
    for t, (arr, level) in enumerate(zip(decomp.d, taxonomy.grouping_levels), start=1):
        if arr.shape != (len(level),):
            raise ValueError(
                f"level {t} has {len(level)} taxa but {arr.shape[0]} d values"
            )


def _lineage_products(d: tuple[np.ndarray, ...], taxonomy: Taxonomy) -> np.ndarray:
    m = np.ones(taxonomy.p)
    for arr, memb in zip(d, taxonomy.membership):
        m = m * arr[memb]
    return m


def compose(decomp: Decomposition, taxonomy: Taxonomy) -> np.ndarray:
    """Map (D, alpha) back to beta: beta_j = alpha_j * prod_t d_{tau(t,j)}."""
    _check_dims(decomp, taxonomy)
    return decomp.alpha * _lineage_products(decomp.d, taxonomy)


def partial_inverse(
    beta: np.ndarray,
    taxonomy: Taxonomy,
    q: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> Decomposition:
    """Unique penalty-minimizing decomposition of beta.

    Iterates exact per-taxon coordinate minimization, level by level
    (Gauss-Seidel across levels; taxa within a level are decoupled and
    update together). Each update solves the taxon's own stationarity
    equation given the other levels,

        d_tau = ( sum_{j in tau} |beta_j|^q / prod_{u != t} d_{tau(u,j)}^q )^(1/2q),

    which is coordinate descent on a smooth strictly convex function of the
    log-scales, so it converges to the global fiber minimum without damping.
    Taxa whose covered beta entries are all zero are frozen at d = 0 and
    excluded. Signs live in alpha: sign(alpha_j) = sign(beta_j), all d >= 0.

    Raises DecompositionError (carrying the final residual) if the
    mass-equilibrium residual is still above tol after max_sweeps.
    """
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape != (taxonomy.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({taxonomy.p},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    if tol <= 0 or q <= 0:
        raise ValueError("tol and q must be positive")

    active = beta != 0.0
    memb = taxonomy.membership
    n_taxa = [len(level) for level in taxonomy.grouping_levels]
    d = []
    for arr_len, m in zip(n_taxa, memb):
        alive = np.zeros(arr_len, dtype=bool)
        if active.any():
            alive[np.unique(m[active])] = True
        d.append(np.where(alive, 1.0, 0.0))
    if not active.any():
        return Decomposition(d=tuple(d), alpha=np.zeros(taxonomy.p), q=q)

    absb_q = np.abs(beta[active]) ** q
    memb_a = [m[active] for m in memb]
    prod_q = np.ones(absb_q.shape[0])  # prod_t d_tau^q over active covariates
    for arr, m in zip(d, memb_a):
        prod_q *= arr[m] ** q

    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        for t, (arr, m) in enumerate(zip(d, memb_a)):
            others = prod_q / arr[m] ** q
            sums = np.bincount(m, weights=absb_q / others, minlength=arr.shape[0])
            new = sums ** (1.0 / (2.0 * q))
            prod_q = others * new[m] ** q
            d[t] = np.where(d[t] > 0, new, 0.0)
        alpha_abs_q = absb_q / prod_q
        # residual in the equilibrium identity d^q = sum |alpha|^q per taxon
        residual = 0.0
        for arr, m in zip(d, memb_a):
            sums = np.bincount(m, weights=alpha_abs_q, minlength=arr.shape[0])
            residual = max(residual, float(np.max(np.abs(arr ** q - sums))))
        if residual <= tol:
            alpha = np.zeros(taxonomy.p)
            alpha[active] = np.sign(beta[active]) * alpha_abs_q ** (1.0 / q)
            return Decomposition(
                d=tuple(d), alpha=alpha, q=q, residual=residual, sweeps=sweep
            )
    raise DecompositionError(
        f"mass-equilibrium fixed point not reached after {max_sweeps} sweeps "
        f"(residual {residual:.3e} > tol {tol:.1e})",
        residual=residual,
    )


def weights_from_decomposition(decomp: Decomposition, taxonomy: Taxonomy) -> np.ndarray:
    """Adaptive weights w_j = prod_t d_{tau(t,j)}, with w_j = 1 where the
    lineage product vanishes."""
    _check_dims(decomp, taxonomy)
    m = _lineage_products(decomp.d, taxonomy)
    return np.where(m > 0.0, m, 1.0)


def weights(beta: np.ndarray, taxonomy: Taxonomy, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Adaptive weights of beta, computed through its partial inverse."""
    return weights_from_decomposition(partial_inverse(beta, taxonomy, tol=tol), taxonomy)


def penalty_decomposed(decomp: Decomposition, lam: float, alpha_exponent: float = 1.0) -> float:
    """Penalty of the single-tuning-parameter criterion at a decomposition:
    sum_t sum_tau d + lam * sum_j |alpha_j|^alpha_exponent.

    alpha_exponent = 0.5 gives the bridge variant of the alpha penalty; the
    solver itself always uses 1.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    total = sum(float(arr.sum()) for arr in decomp.d)
    return total + lam * float(np.sum(np.abs(decomp.alpha) ** alpha_exponent))


def penalty_weighted(
    beta: np.ndarray,
    w: np.ndarray,
    taxonomy: Taxonomy,
    n: int,
    lam: float,
) -> float:
    """Weighted lineage penalty n * lam * sum_L ||beta_L||_1 / w_L.

    Every index of a lineage must share one weight (they do whenever w came
    from weights()); a mismatch raises ValueError.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    beta = np.asarray(beta, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if beta.shape != (taxonomy.p,) or w.shape != (taxonomy.p,):
        raise ValueError("beta and w must have length p")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    lid = taxonomy.lineage_ids
    n_lineages = int(lid.max()) + 1 if taxonomy.p else 0
    wmax = np.full(n_lineages, -np.inf)
    wmin = np.full(n_lineages, np.inf)
    np.maximum.at(wmax, lid, w)
    np.minimum.at(wmin, lid, w)
    bad = wmax - wmin > 1e-9 * np.maximum(wmax, 1.0)
    if np.any(bad):
        raise ValueError(
            f"weight vector is inconsistent within lineage(s) {np.nonzero(bad)[0][:5]}"
        )
    norms = np.bincount(lid, weights=np.abs(beta), minlength=n_lineages)
    return float(n * lam * np.sum(norms / wmax))
