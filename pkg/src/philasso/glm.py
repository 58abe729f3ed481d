"""Likelihood layer: Gaussian and Bernoulli-logit families.

Log-likelihood, gradient, IRLS working quantities, and prediction. The
Gaussian family uses the unit-variance convention (the noise scale is
profiled out and never enters the coefficient optimization); the logit
family is guarded against separation-driven overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "GAUSSIAN",
    "LOGIT",
    "Dataset",
    "log_likelihood",
    "gradient",
    "irls_working",
    "predict",
    "linear_predictor",
]

GAUSSIAN = "gaussian"
LOGIT = "logit"

MU_EPS = 1e-15          # keep fitted probabilities away from {0, 1}
WEIGHT_FLOOR = 1e-5     # IRLS weight floor, guards near-separated fits


@dataclass(frozen=True)
class Dataset:
    """Design matrix, response, family, and intercept flag.

    Arrays are coerced to float64 and frozen; a Dataset can be shared
    across concurrent fits.
    """

    X: np.ndarray
    y: np.ndarray
    family: str = GAUSSIAN
    intercept: bool = True

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64)).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("need n >= 1 and p >= 1")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("non-finite entries in X or y")
        if self.family not in (GAUSSIAN, LOGIT):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == LOGIT and not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("logit responses must be in {0, 1}")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def linear_predictor(data: Dataset, beta: np.ndarray, intercept: float = 0.0) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (data.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({data.p},)")
    return data.X @ beta + intercept


def _mean(data: Dataset, eta: np.ndarray) -> np.ndarray:
    if data.family == GAUSSIAN:
        return eta
    return np.clip(expit(eta), MU_EPS, 1.0 - MU_EPS)


def log_likelihood(data: Dataset, beta: np.ndarray, intercept: float = 0.0) -> float:
    """Gaussian: -(1/2) sum (y - eta)^2. Logit: sum y*eta - log(1 + e^eta).

    The logit term uses logaddexp, so arbitrarily large |eta| is safe.
    """
    eta = linear_predictor(data, beta, intercept)
    if data.family == GAUSSIAN:
        r = data.y - eta
        return float(-0.5 * (r @ r))
    return float(data.y @ eta - np.logaddexp(0.0, eta).sum())


def gradient(data: Dataset, beta: np.ndarray, intercept: float = 0.0) -> np.ndarray:
    """Score vector X'(y - mu); the intercept component is appended when the
    dataset carries an intercept."""
    eta = linear_predictor(data, beta, intercept)
    resid = data.y - _mean(data, eta)
    g = data.X.T @ resid
    if data.intercept:
        return np.concatenate([g, [resid.sum()]])
    return g


def irls_working(data: Dataset, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Working weights mu(1-mu) (floored) and response eta + (y-mu)/w.

    For the Gaussian family the weights are identically one and the working
    response is y itself.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if data.family == GAUSSIAN:
        return np.ones_like(eta), data.y.copy()
    mu = _mean(data, eta)
    w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
    z = eta + (data.y - mu) / w
    return w, z


def predict(data: Dataset, beta: np.ndarray, intercept: float = 0.0) -> np.ndarray:
    """Fitted means: eta for Gaussian, clamped logistic(eta) for logit."""
    eta = linear_predictor(data, beta, intercept)
    return _mean(data, eta)
