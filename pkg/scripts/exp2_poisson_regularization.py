"""Experiment 2: Poisson- vs Gaussian-family targeted regularization on counts.

    python scripts/exp2_poisson_regularization.py --seeds 20 --jobs 8 --out results/exp2

Writes ``benchmark.csv`` and prints the per-seed win rate of the Poisson fit.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from tresnet.cli import write_rows
from tresnet.config import load_config
from tresnet.experiments import BENCHMARK_COLUMNS, benchmark_jobs, benchmark_rows, run_jobs

HERE = Path(__file__).resolve().parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=HERE / "configs" / "exp2.cfg")
    p.add_argument("--seeds", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/exp2"))
    args = p.parse_args(argv)

    cfg = load_config(args.config, {"seeds": str(args.seeds)} if args.seeds else None)
    t0 = time.time()
    results = run_jobs(benchmark_jobs(cfg), args.jobs)
    write_rows(args.out / "benchmark.csv", BENCHMARK_COLUMNS, benchmark_rows(cfg, results))

    score = {(r["family"], r["seed"]): r["scores"].get("tr") for r in results if r["status"] == "ok"}
    seeds = sorted({s for f, s in score if ("poisson", s) in score and ("gaussian", s) in score})
    wins = [score[("poisson", s)] < score[("gaussian", s)] for s in seeds]
    for fam in ("poisson", "gaussian"):
        vals = [score[(fam, s)] for s in seeds]
        print(f"{fam:>9}-family TR  median sqrt-MISE {np.median(vals):.4f}")
    print(f"poisson beats gaussian in {np.mean(wins):.0%} of {len(seeds)} seeds ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
