"""Experiment 1: sqrt-MISE of TR, AIPW and the outcome-only plugin across seeds.

    python scripts/exp1_tr_vs_plugin.py --seeds 50 --jobs 8 --out results/exp1

Writes ``benchmark.csv`` (per-seed and summary rows) and prints, per basis,
the fraction of seeds where TR is no worse than the plugin.
"""
import argparse
import time
from pathlib import Path

from tresnet.cli import write_rows
from tresnet.config import load_config
from tresnet.experiments import BENCHMARK_COLUMNS, benchmark_jobs, benchmark_rows, run_jobs

HERE = Path(__file__).resolve().parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=HERE / "configs" / "exp1.cfg")
    p.add_argument("--seeds", type=int, help="override the config's seed count")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/exp1"))
    args = p.parse_args(argv)

    cfg = load_config(args.config, {"seeds": str(args.seeds)} if args.seeds else None)
    t0 = time.time()
    results = run_jobs(benchmark_jobs(cfg), args.jobs)
    rows = benchmark_rows(cfg, results)
    write_rows(args.out / "benchmark.csv", BENCHMARK_COLUMNS, rows)

    for r in rows:
        if r["kind"] == "summary":
            print(f"{r['basis']:>16}  {r['estimator']:>6}  median sqrt-MISE {r['sqrt_mise']:.4f}  "
                  f"tr<=plugin {r['frac_tr_beats_plugin']:.0%}  [{r['status']}]")
    print(f"{len(results)} jobs in {time.time() - t0:.0f}s -> {args.out / 'benchmark.csv'}")


if __name__ == "__main__":
    main()
