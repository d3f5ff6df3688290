"""Command-line front end: generate -> partition -> balance -> evaluate / report.

Every command reads an optional JSON config (``--config``) whose sections
mirror the subcommands; flags given on the command line win. Each artifact
records the seed and a hash of the effective config: JSON files carry them
as fields, CSV files as a leading ``#`` comment line.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 solver error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .balance import METHODS, TSEBCT, PcaConfig, SolverConfig, SolverError
from .data_model import DataError, ObservationTable, build_stratum_index, data_lines, load_table, summarize, write_table
from .evaluate import compare_methods, uplift_metrics
from .hexgrid import DEFAULT_THRESHOLD, flexible_partition, read_inventory, validate_partition, write_partition
from .pipeline import UNWEIGHTED, RunSettings, solve_method, strata_for
from .synthgen import BINARY_OUTCOME, SynthConfig, gen_dataset

log = logging.getLogger("tsebct")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "schema": {"treatment": "T", "outcome": "Y", "cell": "OD", "time": "time"},
    "generate": {
        "n": 10_000,
        "p": 100,
        "confounding_rate": 0.4,
        "confounding_strength": 0.5,
        "od_trials": 100,
        "od_prob": 0.9,
        "treatment_shift": 0.4,
        "outcome_noise_sd": 3.0,
    },
    "partition": {"threshold_fraction": DEFAULT_THRESHOLD},
    "balance": {
        "explained_threshold": 0.95,
        "max_components": None,
        "treatment_degree": 1,
        "learning_rate": 1.0,
        "tolerance": 0.01,
        "max_iterations": 200,
        "grid_threshold": DEFAULT_THRESHOLD,
        "ipw_trim": 0.05,
    },
    "evaluate": {"learner": "logistic", "dose": None, "treated_threshold": 0.0, "grid_threshold": DEFAULT_THRESHOLD},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def load_config(path: Optional[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in user.items():
        if key not in cfg:
            raise UsageError(f"unknown config section '{key}'; expected one of {sorted(cfg)}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config section '{key}' must be an object")
            unknown = set(value) - set(cfg[key])
            if unknown:
                raise UsageError(f"unknown keys in '{key}': {sorted(unknown)}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def apply_flags(cfg: dict, section: str, overrides: Dict[str, object]) -> dict:
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            cfg["seed"] = value
        else:
            cfg[section][key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(command: str, cfg: dict) -> dict:
    return {"command": command, "seed": cfg["seed"], "config_hash": config_hash(cfg), "version": __version__}


def _comment(prov: dict) -> str:
    return f"tsebct {prov['command']} seed={prov['seed']} config_hash={prov['config_hash']}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_rows(path: Path, header: Sequence[str], rows, prov: dict) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_comment(prov)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------- data helpers


def read_dataset(path: str, cfg: dict) -> ObservationTable:
    """Load a dataset CSV using the configured schema.

    The time role is dropped when the file has no such column, and the
    binary outcome column is kept as a companion when present.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(data_lines(fh)), [])
    header = [h.strip() for h in header]
    schema = dict(cfg["schema"])
    if schema.get("time") not in header:
        schema.pop("time", None)
    extra = [BINARY_OUTCOME] if BINARY_OUTCOME in header else []
    return load_table(p, schema, extra)


def read_weights(path: str, n: int) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"weights file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(data_lines(fh))
        if reader.fieldnames is None or "weight" not in reader.fieldnames:
            raise DataError(f"{p}: missing column 'weight'")
        try:
            w = np.array([float(row["weight"]) for row in reader])
        except ValueError as exc:
            raise DataError(f"{p}: {exc}") from None
    if w.shape[0] != n:
        raise DataError(f"{p}: {w.shape[0]} weights but the dataset has {n} rows")
    return w


def _settings(cfg: dict) -> RunSettings:
    b = cfg["balance"]
    try:
        return RunSettings(
            pca=PcaConfig(
                explained_threshold=b["explained_threshold"],
                max_components=b["max_components"],
                treatment_degree=b["treatment_degree"],
            ),
            solver=SolverConfig(
                learning_rate=b["learning_rate"], tolerance=b["tolerance"], max_iterations=b["max_iterations"]
            ),
            grid_threshold=b["grid_threshold"],
            grid_seed=cfg["seed"],
            ipw_trim=b["ipw_trim"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid balance config: {exc}") from None


def _confounder_correlation(table: ObservationTable, n_confounders: int, cutoff: float = 0.05) -> dict:
    """Feature-treatment correlation summary for a generated dataset.

    Raising the confounding rate spreads the treatment signal over more
    features, so the share of correlated features and the all-feature mean
    go up while the per-confounder mean goes down.
    """
    X, t = table.features, table.treatment
    r = np.abs([np.corrcoef(X[:, j], t)[0, 1] for j in range(table.p)])
    conf = r[:n_confounders]
    return {
        "mean_abs_corr_all": float(np.mean(r)),
        "mean_abs_corr_confounders": float(np.mean(conf)) if conf.size else 0.0,
        "share_abs_corr_above": float(np.mean(r > cutoff)),
        "corr_cutoff": cutoff,
    }


# ---------------------------------------------------------------- commands


def cmd_generate(args, cfg: dict) -> int:
    apply_flags(cfg, "generate", {
        "seed": args.seed, "n": args.n, "p": args.p,
        "confounding_rate": args.rc, "confounding_strength": args.sc,
    })
    try:
        synth = SynthConfig(seed=cfg["seed"], **cfg["generate"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    prov = provenance("generate", cfg)
    table = gen_dataset(synth)
    write_table(table, out, cfg["schema"], comment=_comment(prov))
    idx = build_stratum_index(table, min_rows=1)
    summary = summarize(table, idx).to_dict()
    summary.update(_confounder_correlation(table, synth.n_confounders))
    summary["n_confounders"] = synth.n_confounders
    _write_json(out.with_suffix(".json"), {**prov, "config": synth.to_dict(), "summary": summary})
    print(
        f"wrote {out} (n={table.n}, p={table.p}); mean |corr(x, T)| {summary['mean_abs_corr_all']:.4f}, "
        f"{summary['share_abs_corr_above']:.0%} of features above {summary['corr_cutoff']}"
    )
    return EXIT_OK


def cmd_partition(args, cfg: dict) -> int:
    apply_flags(cfg, "partition", {"seed": args.seed, "threshold_fraction": args.threshold})
    frac = cfg["partition"]["threshold_fraction"]
    try:
        inv = read_inventory(args.inventory)
    except FileNotFoundError:
        raise DataError(f"file not found: {args.inventory}") from None
    except ValueError as exc:
        raise DataError(f"invalid inventory: {exc}") from None
    try:
        part = flexible_partition(inv, frac, cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    violations = validate_partition(part, inv, frac)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    prov = provenance("partition", cfg)
    write_partition(part, out, comment=_comment(prov))
    report = {
        **prov,
        "threshold_fraction": frac,
        "threshold_volume": part.threshold_volume,
        "total_orders": inv.total_orders,
        "cells": len(inv),
        "grids": [
            {
                "grid_id": g,
                "cells": [[c.q, c.r] for c in sorted(grid.member_cells)],
                "aggregate_volume": grid.aggregate_volume,
                "effective_resolution": grid.effective_resolution,
                "under_threshold": grid.under_threshold,
            }
            for g, grid in enumerate(part.grids)
        ],
        "valid": not violations,
        "violations": [{"kind": v.kind, "message": v.message, "grid": v.grid} for v in violations],
    }
    _write_json(out.with_suffix(".json"), report)
    print(f"wrote {out}: {len(part.grids)} grids, {len(part.flagged)} under threshold, valid={not violations}")
    return EXIT_OK if not violations else EXIT_DATA


def _methods(spec: str) -> List[str]:
    if spec == "all":
        return list(METHODS)
    names = [m.strip() for m in spec.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise UsageError(f"unknown method(s) {bad or spec!r}; choose from {list(METHODS)} or 'all'")
    return names


def cmd_balance(args, cfg: dict) -> int:
    apply_flags(cfg, "balance", {
        "seed": args.seed, "explained_threshold": args.pca_threshold,
        "tolerance": args.tolerance, "max_iterations": args.max_iterations,
        "learning_rate": args.learning_rate, "treatment_degree": args.treatment_degree,
    })
    if args.no_grid:
        cfg["balance"]["grid_threshold"] = None
    methods = _methods(args.method)
    settings = _settings(cfg)
    table = read_dataset(args.data, cfg)
    table, idx = strata_for(table, settings.grid_threshold, settings.grid_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance("balance", cfg)
    failed = []
    for method in methods:
        sol = solve_method(method, table, idx, settings)
        _write_rows(out / f"weights_{method}.csv", ["row_id", "weight"],
                    ((i, float(w)) for i, w in enumerate(sol.weights)), prov)
        _write_rows(out / f"trace_{method}.csv", ["iteration", "loss", "objective"],
                    ((i + 1, float(l), float(o)) for i, (l, o) in enumerate(zip(sol.loss_trace, sol.objective_trace))),
                    prov)
        report = {**prov, **sol.report(), "strata": idx.count, "rows": table.n}
        _write_json(out / f"balance_{method}.json", report)
        print(f"{method}: converged={sol.converged} iterations={sol.iterations} final_loss={sol.final_loss:.3g}")
        if not sol.converged:
            failed.append(method)
    if failed:
        log.error("no convergence for %s within %d iterations", failed, settings.solver.max_iterations)
        return EXIT_SOLVER
    return EXIT_OK


def _parse_weight_specs(specs: Sequence[str]) -> Dict[str, Optional[str]]:
    out: Dict[str, Optional[str]] = {}
    for spec in specs:
        if spec == UNWEIGHTED:
            out[UNWEIGHTED] = None
            continue
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"weights must be given as NAME=PATH or '{UNWEIGHTED}', got {spec!r}")
        out[name] = path
    return out


def _evaluate(table: ObservationTable, weight_paths: Dict[str, Optional[str]], cfg: dict, out: Path, command: str):
    e = cfg["evaluate"]
    table, idx = strata_for(table, e["grid_threshold"], cfg["seed"])
    weights = {
        name: np.full(table.n, 1.0 / table.n) if path is None else read_weights(path, table.n)
        for name, path in weight_paths.items()
    }
    comparison = compare_methods(table, weights, idx, learner=e["learner"])
    if e["dose"] is not None or e["treated_threshold"] != 0.0:
        comparison["metrics"] = {
            m: uplift_metrics(table, w, m, e["learner"], e["dose"], e["treated_threshold"]) for m, w in weights.items()
        }
    names = list(weights)
    prov = provenance(command, cfg)
    out.mkdir(parents=True, exist_ok=True)
    corr = comparison["correlation"]
    rows = [[f] + [float(corr[m].weighted[j]) for m in names] for j, f in enumerate(table.feature_names)]
    rows.append(["average_absolute"] + [corr[m].average_absolute_weighted for m in names])
    rows.append(["worst_stratum_average_absolute"] + [corr[m].worst_stratum() for m in names])
    _write_rows(out / "correlation_table.csv", ["feature"] + names, rows, prov)
    met = comparison["metrics"]
    _write_rows(out / "uplift_table.csv", ["metric"] + names,
                [["auuc"] + [met[m].auuc for m in names], ["auc"] + [met[m].auc for m in names]], prov)
    _write_json(out / "evaluation.json", {
        **prov,
        "methods": names,
        "correlation": {m: corr[m].to_dict() for m in names},
        "uplift": {m: met[m].to_dict() for m in names},
    })
    width = max(len(m) for m in names)
    print(f"{'method':<{width}}  avg|corr|   AUUC      AUC")
    for m in names:
        print(f"{m:<{width}}  {corr[m].average_absolute_weighted:.4f}     {met[m].auuc:.4f}    {met[m].auc:.4f}")


def cmd_evaluate(args, cfg: dict) -> int:
    apply_flags(cfg, "evaluate", {"seed": args.seed, "learner": args.learner, "dose": args.dose})
    paths = _parse_weight_specs(args.weights)
    table = read_dataset(args.data, cfg)
    _evaluate(table, paths, cfg, Path(args.out_dir), "evaluate")
    return EXIT_OK


def cmd_report(args, cfg: dict) -> int:
    """Evaluate every ``weights_<method>.csv`` in a balance output directory."""
    apply_flags(cfg, "evaluate", {"seed": args.seed, "learner": args.learner, "dose": args.dose})
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise DataError(f"not a directory: {run_dir}")
    paths: Dict[str, Optional[str]] = {UNWEIGHTED: None}
    for method in METHODS:
        f = run_dir / f"weights_{method}.csv"
        if f.exists():
            paths[method] = str(f)
    if len(paths) == 1:
        raise DataError(f"no weights_<method>.csv files in {run_dir}")
    table = read_dataset(args.data, cfg)
    _evaluate(table, paths, cfg, Path(args.out_dir or run_dir), "report")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsebct", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int)

    g = sub.add_parser("generate", help="write a synthetic confounded dataset")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--rc", type=float, help="confounding rate: share of features driving the treatment")
    g.add_argument("--sc", type=float, help="confounding strength")
    g.add_argument("--out", default="dataset.csv")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="aggregate hex cells into flexible grids")
    common(p)
    p.add_argument("--inventory", required=True, help="CSV with q, r, volume columns")
    p.add_argument("--threshold", type=float, help="minimum share of total orders per grid")
    p.add_argument("--out", default="partition.csv")
    p.set_defaults(func=cmd_partition)

    b = sub.add_parser("balance", help="solve balancing weights")
    common(b)
    b.add_argument("--data", required=True)
    b.add_argument("--method", default=TSEBCT, help=f"one of {', '.join(METHODS)}, a comma list, or 'all'")
    b.add_argument("--pca-threshold", type=float)
    b.add_argument("--treatment-degree", type=int)
    b.add_argument("--tolerance", type=float)
    b.add_argument("--max-iterations", type=int)
    b.add_argument("--learning-rate", type=float)
    b.add_argument("--no-grid", action="store_true", help="use the raw cell labels as strata")
    b.add_argument("--out-dir", default="balance_out")
    b.set_defaults(func=cmd_balance)

    e = sub.add_parser("evaluate", help="correlation and uplift tables for given weight files")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--weights", nargs="+", required=True, metavar="NAME=PATH",
                   help=f"weight files; the bare word '{UNWEIGHTED}' adds uniform weights")
    e.add_argument("--learner", choices=("logistic", "linear"))
    e.add_argument("--dose", type=float)
    e.add_argument("--out-dir", default="evaluation")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="evaluate all weight files of a balance run against unweighted")
    common(r)
    r.add_argument("--data", required=True)
    r.add_argument("--run-dir", required=True, help="output directory of 'balance'")
    r.add_argument("--learner", choices=("logistic", "linear"))
    r.add_argument("--dose", type=float)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
