"""Command-line interface: fit, path, cv, simulate, decompose, metrics.

Exit codes: 0 success, 1 error (bad input, infeasible request), 2 finished
but not converged (the output is still written and usable). All commands
are deterministic given their inputs and --seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio, glm, sim, tuning
from .decompose import DecompositionError, partial_inverse
from .solver import SolverOptions, phi_lasso_fit, phi_lasso_path
from .taxonomy import TaxonomyError, read_taxonomy_tsv

log = logging.getLogger("philasso")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _setup_logging(json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        class JsonFormatter(logging.Formatter):
            def format(self, record):
                return json.dumps({
                    "level": record.levelname.lower(),
                    "name": record.name,
                    "message": record.getMessage(),
                }, sort_keys=True)

        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logging.basicConfig(level=logging.INFO, handlers=[handler], force=True)


def _load_dataset(args) -> tuple[glm.Dataset, "Taxonomy"]:
    taxonomy = read_taxonomy_tsv(args.taxonomy)
    _, X = fileio.read_design_tsv(args.design)
    y = fileio.read_vector(args.response)
    if X.shape[1] != taxonomy.p:
        raise ValueError(
            f"dimension mismatch: design has {X.shape[1]} covariates, "
            f"taxonomy covers {taxonomy.p}"
        )
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"dimension mismatch: design has {X.shape[0]} rows, response {y.shape[0]}"
        )
    if args.normalize_rows:
        sums = X.sum(axis=1, keepdims=True)
        if np.any(sums == 0):
            raise ValueError("cannot normalize rows: a row sums to zero")
        X = X / sums
    data = glm.Dataset(
        X=X, y=y, family=args.family, intercept=not args.no_intercept
    )
    return data, taxonomy


def _solver_options(args) -> SolverOptions:
    return SolverOptions(standardize=not args.no_standardize)


def _grid(args, data):
    if args.lambdas:
        vals = sorted((float(v) for v in args.lambdas.split(",")), reverse=True)
        return np.asarray(vals)
    return tuning.lambda_grid(data, n_points=args.grid_points, min_ratio=args.min_ratio)


def _manifest(args, command: str, inputs: list[str], started: float, out_path: Path) -> None:
    digests = {str(p): fileio.sha256_of(p) for p in inputs}
    payload = {
        "command": command,
        "inputs": digests,
        "configDigest": "sha256:" + hashlib.sha256(
            "".join(sorted(digests.values())).encode()
        ).hexdigest(),
        "seed": args.seed,
        "toolVersion": __version__,
        "startedUnix": round(started, 3),
        "finishedUnix": round(time.time(), 3),
    }
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_fit(args) -> int:
    data, taxonomy = _load_dataset(args)
    fit = phi_lasso_fit(data, taxonomy, args.lam, _solver_options(args))
    Path(args.out).write_text(fileio.fit_to_json(fit), encoding="utf-8")
    log.info("fit written to %s (converged=%s, support=%d)",
             args.out, fit.converged, fit.support.size)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_path(args) -> int:
    data, taxonomy = _load_dataset(args)
    grid = _grid(args, data)
    result = phi_lasso_path(data, taxonomy, grid, _solver_options(args))
    parts = [fileio.fit_to_json(f).rstrip("\n") for f in result.fits if f is not None]
    payload = "[\n" + ",\n".join(parts) + "\n]\n" if parts else "[]\n"
    Path(args.out).write_text(payload, encoding="utf-8")
    for lam, msg in result.failures:
        log.warning("tuning value %g failed: %s", lam, msg)
    bad = any(f is None or not f.converged for f in result.fits)
    return EXIT_NOT_CONVERGED if bad else EXIT_OK


def cmd_cv(args) -> int:
    data, taxonomy = _load_dataset(args)
    if data.family != glm.LOGIT and args.select in ("auc", "both"):
        raise ValueError("AUC requires binary response")
    grid = _grid(args, data)
    k = data.n if args.folds == "loo" else int(args.folds)
    cv = tuning.kfold_cv(
        data, taxonomy, grid, _solver_options(args), k=k,
        seed=args.seed or 0, n_jobs=args.threads,
    )
    fileio.write_cv_csv(cv, args.out_cv)

    picks = []
    if data.family == glm.LOGIT:
        if args.select in ("auc", "both") and cv.best_by_auc is not None:
            picks.append(cv.best_by_auc)
        if args.select in ("brier", "both") and cv.best_by_brier is not None:
            picks.append(cv.best_by_brier)
    if picks:
        summaries = [tuning.selection_summary(cv, lam) for lam in dict.fromkeys(picks)]
        units = [t.name for t in taxonomy.singleton_level]
        grouping = taxonomy.grouping_levels
        def labels_at(level_idx):
            if level_idx < 0:
                return [""] * taxonomy.p
            col = {}
            for taxon in grouping[level_idx]:
                for i in taxon.indices:
                    col[i] = taxon.name
            return [col[i] for i in range(1, taxonomy.p + 1)]
        fileio.write_selection_tsv(
            summaries,
            unit_labels=units,
            family_labels=labels_at(len(grouping) - 2),
            genus_labels=labels_at(len(grouping) - 1),
            path=args.out_selection,
        )
        log.info("selection table written to %s", args.out_selection)
    log.info("cv curves written to %s", args.out_cv)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.time()
    cfg_path = Path(args.config)
    raw = cfg_path.read_bytes()
    if cfg_path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        obj = tomllib.loads(raw.decode("utf-8"))
    else:
        obj = json.loads(raw.decode("utf-8"))
    sim_cfg = sim.SimConfig.from_mapping(obj.get("sim", {}))
    if args.seed is not None:
        sim_cfg = sim.SimConfig.from_mapping(
            {**json.loads(sim_cfg.to_json()), "seed": args.seed}
        )
    exp = obj.get("experiment", {})
    tuning_spec = sim.TuningSpec(**exp.get("tuning", {}))
    n_list = exp.get("n_list", [50, 100, 200])
    replicates = int(exp.get("replicates", 20))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = sim.run_experiment(sim_cfg, n_list, replicates, tuning_spec)
    csv_path = out_dir / "experiment.csv"
    fileio.write_experiment_csv(result.summary_rows(), csv_path)
    (out_dir / "chosen_lambda.json").write_text(
        json.dumps({str(k): v for k, v in result.chosen_lambda.items()},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _manifest(args, "simulate", [args.config], started, out_dir / "manifest.json")
    total_failures = sum(result.failures.values())
    if total_failures:
        log.warning("%d replicate fits failed and were excluded", total_failures)
    log.info("experiment table written to %s", csv_path)
    return EXIT_OK


def cmd_decompose(args) -> int:
    taxonomy = read_taxonomy_tsv(args.taxonomy)
    beta = fileio.read_vector(args.beta)
    if beta.shape[0] != taxonomy.p:
        raise ValueError(
            f"dimension mismatch: beta has {beta.shape[0]} entries, "
            f"taxonomy covers {taxonomy.p}"
        )
    try:
        decomp = partial_inverse(beta, taxonomy, q=args.q)
    except DecompositionError as exc:
        log.error("fixed point did not converge (residual %.3e)", exc.residual)
        return EXIT_NOT_CONVERGED
    Path(args.out).write_text(fileio.decomposition_to_json(decomp), encoding="utf-8")
    log.info("decomposition written to %s (residual %.3e)", args.out, decomp.residual)
    return EXIT_OK


def cmd_metrics(args) -> int:
    if args.kind in ("auc", "brier", "both") and not (args.scores and args.labels):
        raise ValueError(f"--kind {args.kind} needs --scores and --labels")
    if args.kind == "support" and not (args.estimated and args.truth):
        raise ValueError("--kind support needs --estimated and --truth")
    out = {}
    if args.kind in ("auc", "both"):
        out["auc"] = tuning.auc(fileio.read_vector(args.scores), fileio.read_vector(args.labels))
    if args.kind in ("brier", "both"):
        out["brier"] = tuning.brier(fileio.read_vector(args.scores), fileio.read_vector(args.labels))
    if args.kind == "support":
        recall, precision = tuning.support_metrics(
            fileio.read_vector(args.estimated), fileio.read_vector(args.truth)
        )
        out = {"recall": recall, "precision": precision}
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="philasso",
        description="Taxonomy-structured penalized GLM fitting and evaluation. "
        "Covariates are used as given (no abundance transform) unless "
        "--normalize-rows is passed.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="base RNG seed (default: config seed or 0)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for fold/replicate loops")
    parser.add_argument("--json-logs", action="store_true", help="JSON log lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--design", required=True, help="design TSV (header + samples)")
        p.add_argument("--response", required=True, help="response, one value per line")
        p.add_argument("--taxonomy", required=True, help="taxonomy TSV")
        p.add_argument("--family", choices=(glm.GAUSSIAN, glm.LOGIT), default=glm.GAUSSIAN)
        p.add_argument("--no-intercept", action="store_true")
        p.add_argument("--no-standardize", action="store_true")
        p.add_argument("--normalize-rows", action="store_true",
                       help="divide each design row by its sum (relative abundances)")

    def add_grid_args(p):
        p.add_argument("--grid-points", type=int, default=50)
        p.add_argument("--min-ratio", type=float, default=1e-3)
        p.add_argument("--lambdas", default=None,
                       help="explicit comma-separated tuning values (overrides the grid)")

    p = sub.add_parser("fit", help="single tuning-value fit")
    add_data_args(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True, help="fit JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="descending tuning-value path")
    add_data_args(p)
    add_grid_args(p)
    p.add_argument("--out", required=True, help="JSON array of fits")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("cv", help="cross-validated tuning curves and selection table")
    add_data_args(p)
    add_grid_args(p)
    p.add_argument("--folds", default="loo", help="'loo' or a fold count")
    p.add_argument("--select", choices=("auc", "brier", "both", "none"), default="both")
    p.add_argument("--out-cv", required=True, help="per-tuning-value CSV")
    p.add_argument("--out-selection", required=True, help="selection TSV")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="run the synthetic benchmark")
    p.add_argument("--config", required=True, help="JSON or TOML config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="penalty-minimizing decomposition of a coefficient vector")
    p.add_argument("--beta", required=True, help="coefficients, one per line")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--out", required=True, help="decomposition JSON path")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("metrics", help="evaluation metrics from files")
    p.add_argument("--kind", choices=("auc", "brier", "both", "support"), default="both")
    p.add_argument("--scores", help="scores/probabilities, one per line")
    p.add_argument("--labels", help="0/1 labels, one per line")
    p.add_argument("--estimated", help="estimated coefficients (kind=support)")
    p.add_argument("--truth", help="true coefficients (kind=support)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.json_logs)
    try:
        return args.func(args)
    except (ValueError, TaxonomyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
