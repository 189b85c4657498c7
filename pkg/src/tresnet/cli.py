"""Command-line front end.

    tresnet simulate  --config run.cfg --out outdir
    tresnet train     --config run.cfg --out outdir
    tresnet estimate  --config run.cfg --out outdir [--model outdir/model.bin]
    tresnet benchmark --config run.cfg --out outdir --jobs 8
    tresnet ensemble  --config run.cfg --out outdir --jobs 8

Any config key can also be given as ``--set key=value`` (repeatable); ``--seed``
overrides the ``seed`` key.  Exit codes: 0 success, 1 configuration error,
2 numeric failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .autodiff import DomainError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, oracle_srf, save_csv, write_metadata
from .estimators import StaleFluctuationError, bootstrap_ensemble, estimate
from .experiments import BENCHMARK_COLUMNS, benchmark_jobs, benchmark_rows, resolve_dataset, run_jobs
from .model import ModelError, load_model, save_model
from .shifts import ShiftError, ShiftSpec
from .training import FluctuationError, TrainingDivergence, train

logger = logging.getLogger("tresnet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class NumericFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# output helpers
# --------------------------------------------------------------------------- #


@contextmanager
def atomic_path(path: Path):
    """Yield a temporary sibling of ``path``; rename it into place only on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, columns, rows) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def _shift_param(spec: ShiftSpec) -> str:
    return spec.column if spec.kind == "pairwise" else f"{spec.param:g}"


def _is_identity(spec: ShiftSpec) -> bool:
    return spec.kind == "percent" and spec.param == 0.0


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #


def cmd_simulate(cfg: RunConfig, out: Path, jobs: int = 1) -> None:
    if cfg.dgp == "csv":
        raise ConfigError("simulate needs a generator dgp, not csv")
    dataset = resolve_dataset(cfg)
    shifts = cfg.shift_family()
    truth = oracle_srf(dataset, shifts)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(out / "data.csv") as tmp:
        save_csv(dataset, tmp, metadata=False)
    with atomic_path(out / "data.csv.meta") as tmp:
        write_metadata(dataset, tmp)
    rows = [{"shift_kind": s.kind, "shift_param": _shift_param(s), "psi_true": t} for s, t in zip(shifts, truth)]
    write_rows(out / "truth.csv", ("shift_kind", "shift_param", "psi_true"), rows)


def cmd_train(cfg: RunConfig, out: Path, jobs: int = 1) -> None:
    dataset = resolve_dataset(cfg)
    model, history = train(dataset, cfg.shift_family(), cfg.model_config(), cfg.train_config(),
                           cfg.resolved_fit_family)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(model_path(cfg, out)) as tmp:
        save_model(model, tmp)
    with atomic_path(out / "history.csv") as tmp:
        history.write_csv(tmp)


def model_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.model_path) if cfg.model_path else out / "model.bin"


def _curve(cfg: RunConfig, model, dataset, shifts):
    est = estimate(model, dataset, shifts)
    ident = [j for j, s in enumerate(shifts) if _is_identity(s)]
    if ident:
        base = est.tr[ident[0]]
        est.extra["percent_change"] = 100.0 * (est.tr - base) / base
    return est


def cmd_estimate(cfg: RunConfig, out: Path, jobs: int = 1) -> None:
    path = model_path(cfg, out)
    model = load_model(path)
    shifts = cfg.shift_family()
    if list(shifts.labels) != list(model.shift_labels):
        raise ConfigError(f"shift family {shifts.labels} differs from the trained model's {model.shift_labels}")
    dataset = resolve_dataset(cfg)
    est = _curve(cfg, model, dataset, shifts)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(out / "curve.csv") as tmp:
        est.write_csv(tmp)


def cmd_benchmark(cfg: RunConfig, out: Path, jobs: int = 1) -> None:
    results = run_jobs(benchmark_jobs(cfg), jobs)
    rows = benchmark_rows(cfg, results)
    write_rows(out / "benchmark.csv", BENCHMARK_COLUMNS, rows)
    failed = [r for r in results if r["status"] != "ok"]
    if failed:
        raise NumericFailure(f"{len(failed)} of {len(results)} benchmark jobs failed; table flagged partial")


def cmd_ensemble(cfg: RunConfig, out: Path, jobs: int = 1) -> None:
    B = cfg.ensemble_size
    if B < 2:
        raise ConfigError("ensemble needs ensemble_size >= 2")
    dataset = resolve_dataset(cfg)
    shifts = cfg.shift_family()
    model, _ = train(dataset, shifts, cfg.model_config(), cfg.train_config(), cfg.resolved_fit_family)
    est = _curve(cfg, model, dataset, shifts)
    bands = bootstrap_ensemble(dataset, shifts, cfg.model_config(), cfg.train_config(), B=B, seed=cfg.seed,
                               jobs=jobs, family=cfg.resolved_fit_family)
    est.q25, est.q50, est.q75 = bands["q25"], bands["q50"], bands["q75"]
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(out / "ensemble.csv") as tmp:
        est.write_csv(tmp)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "estimate": cmd_estimate,
            "benchmark": cmd_benchmark, "ensemble": cmd_ensemble}


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tresnet", description="Shift-response estimation with targeted regularization.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for benchmark/ensemble")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--model", type=Path, help="model file for estimate (default: <out>/model.bin)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        out["seed"] = str(args.seed)
    if args.model is not None:
        out["model_path"] = str(args.model)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, _overrides(args))
        COMMANDS[args.command](cfg, args.out, args.jobs)
    except (ConfigError, ShiftError, ModelError) as exc:
        print(f"tresnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergence, FluctuationError, NumericFailure, StaleFluctuationError,
            FloatingPointError, DomainError) as exc:
        print(f"tresnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataError) as exc:
        print(f"tresnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
