"""File formats shared by the command-line tools.

Design matrix: TSV whose first row holds covariate identifiers in taxonomy
index order and whose remaining rows are samples. Responses and coefficient
vectors: one value per line. Fits and decompositions: JSON. All writers
emit byte-stable output for fixed inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .decompose import Decomposition
from .solver import PhiLassoFit
from .tuning import CvResult, SelectionSummary

__all__ = [
    "read_design_tsv",
    "read_vector",
    "fit_to_json",
    "decomposition_to_json",
    "write_cv_csv",
    "write_selection_tsv",
    "write_experiment_csv",
    "sha256_of",
]


def read_design_tsv(path) -> tuple[list[str], np.ndarray]:
    """(column identifiers, n x p float matrix) from a design TSV."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: need a header row and at least one sample")
    header = lines[0].split("\t")
    rows = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(header):
            raise ValueError(f"{path}: row width {len(parts)} != header width {len(header)}")
        rows.append([float(v) for v in parts])
    return header, np.asarray(rows, dtype=np.float64)


def read_vector(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        vals = [float(ln.strip()) for ln in fh if ln.strip()]
    if not vals:
        raise ValueError(f"{path}: empty vector file")
    return np.asarray(vals, dtype=np.float64)


def fit_to_json(fit: PhiLassoFit) -> str:
    sparse = {str(j + 1): float(fit.beta[j]) for j in np.flatnonzero(fit.beta)}
    obj = {
        "lambda": float(fit.lam),
        "intercept": float(fit.intercept),
        "beta": sparse,
        "converged": bool(fit.converged),
        "outerIterations": int(fit.outer_iterations),
        "kktResidual": float(fit.kkt_residual),
        "objective": float(fit.objective),
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def decomposition_to_json(decomp: Decomposition) -> str:
    obj = {
        "q": float(decomp.q),
        "d": [
            {"level": level, "taxon": order, "value": float(v)}
            for (level, order), v in sorted(decomp.d_by_taxon().items())
        ],
        "alpha": [float(a) for a in decomp.alpha],
        "equilibriumResidual": float(decomp.residual),
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_cv_csv(cv: CvResult, path) -> None:
    """Per-tuning-value curve data: lambda, auc, brier, deviance, support size."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "auc", "brier", "deviance", "meanSupportSize"])
        for li, lam in enumerate(cv.grid):
            mean_support = float((cv.fold_betas[:, li, :] != 0).sum(axis=1).mean())
            w.writerow([
                f"{lam:.10g}",
                "" if cv.auc is None or np.isnan(cv.auc[li]) else f"{cv.auc[li]:.10g}",
                "" if cv.brier is None or np.isnan(cv.brier[li]) else f"{cv.brier[li]:.10g}",
                "" if np.isnan(cv.deviance[li]) else f"{cv.deviance[li]:.10g}",
                f"{mean_support:.10g}",
            ])


def write_selection_tsv(
    summaries: list[SelectionSummary],
    unit_labels: list[str],
    family_labels: list[str],
    genus_labels: list[str],
    path,
) -> None:
    """Selection table mirroring the per-unit frequency/estimate layout.

    One block of (frequency, meanEstimate, se) columns per tuning value;
    covariates never selected at any listed value are omitted, and a dash
    marks a covariate unselected at one value but present at another.
    """
    p = summaries[0].frequency.shape[0]
    keep = [j for j in range(p) if any(s.frequency[j] > 0 for s in summaries)]
    with open(path, "w", encoding="utf-8") as fh:
        head = ["covariate", "unit-label", "family-label", "genus-label"]
        for s in summaries:
            tag = f"{s.lam:.6g}"
            head += [f"frequency@{tag}", f"meanEstimate@{tag}", f"se@{tag}"]
        fh.write("\t".join(head) + "\n")
        for j in keep:
            row = [str(j + 1), unit_labels[j], family_labels[j], genus_labels[j]]
            for s in summaries:
                if s.frequency[j] > 0:
                    row += [
                        f"{s.frequency[j]:.10g}",
                        f"{s.mean_estimate[j]:.10g}",
                        f"{s.se_estimate[j]:.10g}",
                    ]
                else:
                    row += ["-", "-", "-"]
            fh.write("\t".join(row) + "\n")


def write_experiment_csv(rows, path) -> None:
    """method,n,metric,mean,se rows from ExperimentResult.summary_rows()."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n", "metric", "mean", "se"])
        for method, n, metric, mean, se in rows:
            w.writerow([method, n, metric, f"{mean:.10g}", f"{se:.10g}"])


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
