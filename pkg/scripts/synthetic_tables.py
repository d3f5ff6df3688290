"""Correlation and uplift tables for every weighting over seeds and confounding rates.

    python scripts/synthetic_tables.py --n 10000 --seeds 0-9 --pca-threshold 0.9 --out results/tables
"""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from tsebct.balance import EBCT, IPW, TSEBCT, PcaConfig
from tsebct.pipeline import UNWEIGHTED, RunSettings, run_methods
from tsebct.synthgen import SynthConfig, gen_dataset

COLUMNS = (UNWEIGHTED, IPW, EBCT, TSEBCT)


def parse_seeds(text):
    if "-" in text:
        lo, hi = map(int, text.split("-"))
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--rates", default="0.4,0.8")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--pca-threshold", type=float, default=0.9)
    ap.add_argument("--no-metrics", action="store_true", help="skip the uplift models")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    settings = RunSettings(pca=PcaConfig(explained_threshold=args.pca_threshold))
    rows = []
    for rc in map(float, args.rates.split(",")):
        for seed in parse_seeds(args.seeds):
            table = gen_dataset(SynthConfig(n=args.n, p=args.p, confounding_rate=rc, seed=seed))
            res = run_methods(table, settings=settings, metrics=not args.no_metrics)
            row = {"confounding_rate": rc, "seed": seed, "strata": res.idx.count,
                   "converged": {m: bool(s.converged) for m, s in res.solutions.items()},
                   "correlation": res.average_abs_correlation()}
            if not args.no_metrics:
                row["auuc"], row["auc"] = res.auuc(), res.auc()
            rows.append(row)
            corr = row["correlation"]
            print(f"r_c={rc} seed={seed:>3}  |corr| " + " ".join(f"{m}={corr[m]:.4f}" for m in COLUMNS)
                  + ("" if args.no_metrics else "  AUUC " + " ".join(f"{m}={row['auuc'][m]:.4f}" for m in COLUMNS)))

    print()
    for rc in sorted({r["confounding_rate"] for r in rows}):
        sub = [r for r in rows if r["confounding_rate"] == rc]
        mean = {m: np.mean([r["correlation"][m] for r in sub]) for m in COLUMNS}
        order = sum(r["correlation"][TSEBCT] < r["correlation"][EBCT] < r["correlation"][UNWEIGHTED]
                    and r["correlation"][IPW] < r["correlation"][UNWEIGHTED] for r in sub)
        print(f"r_c={rc}: mean avg|corr| " + " | ".join(f"{m} {mean[m]:.4f}" for m in COLUMNS)
              + f"   strict ordering {order}/{len(sub)}")
        if not args.no_metrics:
            auuc = {m: np.mean([r["auuc"][m] for r in sub]) for m in COLUMNS}
            hits = sum(r["auuc"][TSEBCT] >= r["auuc"][EBCT] >= r["auuc"][UNWEIGHTED] for r in sub)
            print(f"          mean AUUC    " + " | ".join(f"{m} {auuc[m]:.4f}" for m in COLUMNS)
                  + f"   AUUC ordering {hits}/{len(sub)}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "synthetic_tables.json").write_text(json.dumps({"args": vars(args) | {"out": str(args.out)}, "runs": rows}, indent=2))


if __name__ == "__main__":
    main()
