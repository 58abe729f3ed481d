"""Tuning-value grids, cross-validation, and evaluation metrics.

Leave-one-out CV is K-fold CV with one sample per fold, so the two share
one implementation and agree exactly when K = n. Fold fits are independent
deterministic computations; results do not depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import glm
from .solver import PhiLassoFit, SolverOptions, phi_lasso_path
from .taxonomy import Taxonomy

__all__ = [
    "CvResult",
    "SelectionSummary",
    "PerformanceRecord",
    "lambda_grid",
    "loo_cv",
    "kfold_cv",
    "validation_tune",
    "auc",
    "brier",
    "support_metrics",
    "estimation_errors",
    "selection_summary",
]

# a tuning value is dropped from best-model selection when more than this
# share of its fold fits failed outright
MAX_FAILED_FOLD_SHARE = 0.10


def lambda_grid(data: glm.Dataset, n_points: int = 50, min_ratio: float = 1e-3) -> np.ndarray:
    """Geometric grid from the null threshold down to its min_ratio multiple.

    The top value is max_j |grad_j ll(0)| / n at the null model (intercept at
    its MLE when fitted), the smallest value at which a plain LASSO returns
    all zeros; the grid is returned descending.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if not 0 < min_ratio < 1:
        raise ValueError("min_ratio must be in (0, 1)")
    intercept = 0.0
    if data.intercept:
        if data.family == glm.GAUSSIAN:
            intercept = float(data.y.mean())
        else:
            ybar = min(max(float(data.y.mean()), 1e-12), 1 - 1e-12)
            intercept = float(np.log(ybar / (1 - ybar)))
    g = glm.gradient(data, np.zeros(data.p), intercept)
    lam_max = float(np.max(np.abs(g[: data.p]))) / data.n
    if lam_max <= 0:
        raise ValueError("all-zero design: the null threshold vanishes")
    if n_points == 1:
        return np.array([lam_max])
    return lam_max * min_ratio ** (np.arange(n_points) / (n_points - 1))


@dataclass
class CvResult:
    """Out-of-fold predictions plus per-tuning-value selection curves."""

    grid: np.ndarray                       # descending tuning values (L,)
    predictions: np.ndarray                # (n, L) out-of-fold means
    fold_of_sample: np.ndarray             # (n,) fold index per sample
    fold_betas: np.ndarray                 # (K, L, p) per-fold estimates
    fold_intercepts: np.ndarray            # (K, L)
    auc: np.ndarray | None                 # (L,), logit only
    brier: np.ndarray | None               # (L,), logit only
    deviance: np.ndarray                   # (L,)
    failed_folds: dict[int, list[tuple[int, str]]]  # lam idx -> [(fold, msg)]
    best_by_auc: float | None
    best_by_brier: float | None

    @property
    def n_folds(self) -> int:
        return self.fold_betas.shape[0]

    def support_frequency(self, lam_index: int) -> np.ndarray:
        return (self.fold_betas[:, lam_index, :] != 0).mean(axis=0)


def _fold_assignment(n, k, y, stratify, seed):
    """Fold index per sample; K = n degenerates to one sample per fold in
    sample order, which makes K-fold with K = n literally leave-one-out."""
    if k == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.intp)
    if stratify:
        for cls in (0.0, 1.0):
            idx = np.flatnonzero(y == cls)
            idx = idx[rng.permutation(idx.size)]
            folds[idx] = np.arange(idx.size) % k
    else:
        folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def kfold_cv(
    data: glm.Dataset,
    taxonomy: Taxonomy,
    grid,
    options: SolverOptions = SolverOptions(),
    k: int | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> CvResult:
    """K-fold cross-validation over a descending tuning grid.

    Every fold fits the full path on its training split (warm-started along
    the path) and predicts its held-out samples at each tuning value. AUC
    and Brier curves are computed from the pooled out-of-fold predictions
    for logit data; deviance curves are family-appropriate. Fold-level fit
    failures are recorded per (fold, tuning value); values where more than
    10% of folds failed are excluded from best-model selection.
    """
    n, p = data.n, data.p
    if n < 3:
        raise ValueError("cross-validation needs n >= 3")
    k = n if k is None else int(k)
    if not 2 <= k <= n:
        raise ValueError("need 2 <= k <= n folds")
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty tuning grid")
    L = grid.size
    folds = _fold_assignment(n, k, data.y, stratify=data.family == glm.LOGIT, seed=seed)

    predictions = np.full((n, L), np.nan)
    fold_betas = np.zeros((k, L, p))
    fold_intercepts = np.zeros((k, L))
    failed: dict[int, list[tuple[int, str]]] = {}

    def run_fold(fold):
        holdout = folds == fold
        train = glm.Dataset(
            X=data.X[~holdout], y=data.y[~holdout],
            family=data.family, intercept=data.intercept,
        )
        return fold, holdout, phi_lasso_path(train, taxonomy, grid, options)

    if n_jobs and n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fold_paths = list(pool.map(run_fold, range(k)))
    else:
        fold_paths = [run_fold(fold) for fold in range(k)]

    # aggregation is keyed by fold index, so execution order is irrelevant
    for fold, holdout, path in fold_paths:
        X_out = data.X[holdout]
        for li, fit in enumerate(path.fits):
            if fit is None:
                failed.setdefault(li, []).append((fold, path.failure_message(grid[li])))
                continue
            fold_betas[fold, li] = fit.beta
            fold_intercepts[fold, li] = fit.intercept
            eta = X_out @ fit.beta + fit.intercept
            if data.family == glm.LOGIT:
                predictions[holdout, li] = np.clip(expit(eta), glm.MU_EPS, 1 - glm.MU_EPS)
            else:
                predictions[holdout, li] = eta

    y = data.y
    deviance = np.full(L, np.nan)
    auc_curve = brier_curve = None
    if data.family == glm.LOGIT:
        auc_curve = np.full(L, np.nan)
        brier_curve = np.full(L, np.nan)
    for li in range(L):
        ok = ~np.isnan(predictions[:, li])
        if not ok.any():
            continue
        pred = predictions[ok, li]
        if data.family == glm.LOGIT:
            deviance[li] = -2.0 * float(
                y[ok] @ np.log(pred) + (1 - y[ok]) @ np.log(1 - pred)
            )
            if len(np.unique(y[ok])) == 2:
                auc_curve[li] = auc(pred, y[ok])
            brier_curve[li] = brier(pred, y[ok])
        else:
            deviance[li] = float(np.sum((y[ok] - pred) ** 2))

    selectable = np.array([
        len(failed.get(li, ())) <= MAX_FAILED_FOLD_SHARE * k for li in range(L)
    ])
    best_by_auc = best_by_brier = None
    if data.family == glm.LOGIT:
        # a tuning value is "null" when every fold fitted an empty model;
        # those are excluded from the AUC pick (ties go to the larger value)
        nonnull = np.array([
            bool((fold_betas[:, li, :] != 0).any()) for li in range(L)
        ])
        cand = selectable & nonnull & ~np.isnan(auc_curve)
        if cand.any():
            vals = np.where(cand, auc_curve, -np.inf)
            best_by_auc = float(grid[int(np.argmax(vals))])
        cand = selectable & ~np.isnan(brier_curve)
        if cand.any():
            vals = np.where(cand, brier_curve, np.inf)
            best_by_brier = float(grid[int(np.argmin(vals))])

    return CvResult(
        grid=grid, predictions=predictions, fold_of_sample=folds,
        fold_betas=fold_betas, fold_intercepts=fold_intercepts,
        auc=auc_curve, brier=brier_curve, deviance=deviance,
        failed_folds=failed, best_by_auc=best_by_auc, best_by_brier=best_by_brier,
    )


def loo_cv(data, taxonomy, grid, options: SolverOptions = SolverOptions()) -> CvResult:
    """Leave-one-out CV: K-fold with one sample per fold."""
    return kfold_cv(data, taxonomy, grid, options, k=data.n)


def validation_tune(
    train: glm.Dataset,
    valid: glm.Dataset,
    taxonomy: Taxonomy,
    grid,
    options: SolverOptions = SolverOptions(),
) -> tuple[float, np.ndarray]:
    """Pick the tuning value minimizing held-out MSPE along the path.

    Returns (best value, per-value MSPE); ties break toward the larger
    value (the grid is descending, argmin returns the first).
    """
    if train.p != valid.p:
        raise ValueError("train and validation sets disagree on p")
    grid = np.asarray(list(grid), dtype=np.float64)
    path = phi_lasso_path(train, taxonomy, grid, options)
    mspe = np.full(grid.size, np.inf)
    for li, fit in enumerate(path.fits):
        if fit is None:
            continue
        pred = valid.X @ fit.beta + fit.intercept
        mspe[li] = float(np.mean((valid.y - pred) ** 2))
    if not np.isfinite(mspe).any():
        raise RuntimeError("every tuning value failed to fit")
    return float(grid[int(np.argmin(mspe))]), mspe


def auc(scores, labels) -> float:
    """Rank-based concordance P(score+ > score-) + 0.5 P(tie), via midranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    r_pos = float(ranks[labels == 1].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def brier(probabilities, labels) -> float:
    """Mean squared probability error."""
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean((p - y) ** 2))


def support_metrics(estimated, truth) -> tuple[float, float]:
    """(recall, precision) of nonzero-support recovery.

    Empty selections have no false positives, so precision is defined as 1
    there; recall is likewise 1 for an empty true support.
    """
    est = np.asarray(estimated).ravel() != 0
    tru = np.asarray(truth).ravel() != 0
    if est.shape != tru.shape:
        raise ValueError("support vectors must have equal length")
    tp = int((est & tru).sum())
    fn = int((~est & tru).sum())
    fp = int((est & ~tru).sum())
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    return recall, precision


@dataclass(frozen=True)
class PerformanceRecord:
    sse: float        # squared estimation error ||beta_hat - beta_true||^2
    mspe: float       # mean squared prediction error on held-out data
    recall: float
    precision: float


def estimation_errors(
    beta_hat: np.ndarray,
    intercept: float,
    true_beta: np.ndarray,
    X_valid: np.ndarray,
    y_valid: np.ndarray,
) -> PerformanceRecord:
    """Estimation error, held-out MSPE, and support recovery in one record."""
    beta_hat = np.asarray(beta_hat, dtype=np.float64).ravel()
    true_beta = np.asarray(true_beta, dtype=np.float64).ravel()
    if beta_hat.shape != true_beta.shape:
        raise ValueError("coefficient vectors must have equal length")
    diff = beta_hat - true_beta
    pred = X_valid @ beta_hat + intercept
    recall, precision = support_metrics(beta_hat, true_beta)
    return PerformanceRecord(
        sse=float(diff @ diff),
        mspe=float(np.mean((np.asarray(y_valid).ravel() - pred) ** 2)),
        recall=recall,
        precision=precision,
    )


@dataclass(frozen=True)
class SelectionSummary:
    """Per-covariate selection frequency and fold-estimate statistics."""

    lam: float
    frequency: np.ndarray      # (p,), share of folds selecting the covariate
    mean_estimate: np.ndarray  # (p,), mean over all folds (zeros included)
    se_estimate: np.ndarray    # (p,), jackknife-style spread of fold estimates


def selection_summary(cv: CvResult, lam: float) -> SelectionSummary:
    """Selection table at one tuning value of a CvResult.

    The spread uses the leave-one-out jackknife convention
    sqrt((K-1)/K * sum_k (b_k - mean)^2), which is the natural standard
    error when folds are LOO replicates and degrades gracefully for K-fold.
    """
    matches = np.flatnonzero(np.isclose(cv.grid, lam, rtol=1e-12, atol=0.0))
    if matches.size == 0:
        raise ValueError(f"tuning value {lam} is not on the CV grid")
    li = int(matches[0])
    betas = cv.fold_betas[:, li, :]
    k = betas.shape[0]
    mean = betas.mean(axis=0)
    se = np.sqrt((k - 1) / k * ((betas - mean) ** 2).sum(axis=0))
    return SelectionSummary(
        lam=float(cv.grid[li]),
        frequency=(betas != 0).mean(axis=0),
        mean_estimate=mean,
        se_estimate=se,
    )
