"""Benchmark sweeps: per-seed jobs, a process-pool fan-out, and summary rows.

A job is one (seed, basis, fit family) cell.  It simulates the dataset for the
seed, trains

* an outcome-only network (no ratio heads, alpha = beta = 0) for ``plugin``;
* the full targeted network for ``tr`` and, through its own outcome and ratio
  heads, for ``aipw``;

and scores each estimator by sqrt-MISE against the empirical oracle SRF.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import Dataset, gen_nonlinear, generate, load_csv, mise, nonlinear_density_ratio_percent, oracle_srf
from .estimators import Nuisances, aipw_from, model_nuisances, tr_srf
from .shifts import ShiftFamily, ShiftSpec
from .training import FluctuationError, TrainingDivergence, train

logger = logging.getLogger(__name__)

BENCHMARK_COLUMNS = ("kind", "dgp", "family", "basis", "estimator", "seed", "sqrt_mise",
                     "frac_tr_beats_plugin", "status")


def resolve_dataset(cfg: RunConfig, seed: int | None = None) -> Dataset:
    """The configured dataset: a generator draw for ``seed`` or the CSV file."""
    if cfg.dgp == "csv":
        return load_csv(cfg.data_path, cfg.family)
    return generate(cfg.dgp, cfg.n, cfg.seed if seed is None else seed, cfg.family, cfg.noise_sd)


def plugin_baseline(dataset: Dataset, shifts: ShiftFamily, cfg: RunConfig, basis: str, family: str,
                    seed: int) -> np.ndarray:
    """Plugin SRF from a network trained on the outcome risk alone."""
    tcfg = dataclasses.replace(cfg.train_config(seed), alpha=0.0, beta0=0.0)
    model, _ = train(dataset, None, cfg.model_config(basis), tcfg, family)
    At = dataset.shifted(shifts)
    Z = model.features(dataset.X)
    return np.array([model.family.mean_from_natural(model.outcome_forward(dataset.X, At[:, j], Z)).mean()
                     for j in range(At.shape[1])])


@dataclass(frozen=True)
class Job:
    cfg: RunConfig
    seed: int
    basis: str
    family: str


def run_job(job: Job) -> dict:
    """sqrt-MISE per requested estimator for one cell; failures become a status string."""
    cfg = job.cfg
    out = {"seed": job.seed, "basis": job.basis, "family": job.family, "scores": {}, "status": "ok"}
    try:
        dataset = resolve_dataset(cfg, job.seed)
        shifts = cfg.shift_family()
        truth = oracle_srf(dataset, shifts)
        if "plugin" in cfg.estimators:
            est = plugin_baseline(dataset, shifts, cfg, job.basis, job.family, job.seed)
            out["scores"]["plugin"] = math.sqrt(mise(est, truth))
        if "tr" in cfg.estimators or "aipw" in cfg.estimators:
            model, _ = train(dataset, shifts, cfg.model_config(job.basis), cfg.train_config(job.seed), job.family)
            if "aipw" in cfg.estimators:
                est = aipw_from(model_nuisances(model, dataset, shifts), dataset.Y)
                out["scores"]["aipw"] = math.sqrt(mise(est, truth))
            if "tr" in cfg.estimators:
                out["scores"]["tr"] = math.sqrt(mise(tr_srf(model, dataset, shifts), truth))
    except (TrainingDivergence, FluctuationError, FloatingPointError, ValueError) as exc:
        out["status"] = f"failed: {type(exc).__name__}: {exc}"
        logger.error("benchmark seed %d (%s, %s) failed: %s", job.seed, job.basis, job.family, exc)
    return out


def benchmark_jobs(cfg: RunConfig) -> list[Job]:
    bases = cfg.bases or (cfg.basis,)
    families = cfg.fit_families or (cfg.resolved_fit_family,)
    return [Job(cfg, cfg.seed + k, b, f) for b in bases for f in families for k in range(cfg.seeds)]


def run_jobs(jobs: list[Job], n_workers: int = 1) -> list[dict]:
    """Results in job order regardless of completion order."""
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            return list(pool.map(run_job, jobs))
    return [run_job(j) for j in jobs]


def benchmark_rows(cfg: RunConfig, results: list[dict]) -> list[dict]:
    """Per-seed rows followed by one summary row per (basis, family, estimator) cell."""
    rows = []
    cells: dict[tuple, dict[str, dict[int, float]]] = {}
    failed: dict[tuple, int] = {}
    for r in results:
        key = (r["basis"], r["family"])
        cells.setdefault(key, {e: {} for e in cfg.estimators})
        failed.setdefault(key, 0)
        if r["status"] != "ok":
            failed[key] += 1
        for est in cfg.estimators:
            score = r["scores"].get(est)
            if score is not None:
                cells[key][est][r["seed"]] = score
            rows.append({"kind": "seed", "dgp": cfg.dgp, "family": r["family"], "basis": r["basis"],
                         "estimator": est, "seed": r["seed"], "sqrt_mise": "" if score is None else score,
                         "frac_tr_beats_plugin": "", "status": r["status"]})
    for (basis, family), by_est in cells.items():
        frac = ""
        tr, pl = by_est.get("tr", {}), by_est.get("plugin", {})
        common = sorted(set(tr) & set(pl))
        if common:
            frac = float(np.mean([tr[s] <= pl[s] for s in common]))
        status = "partial" if failed[(basis, family)] else "ok"
        for est, scores in by_est.items():
            med = float(np.median([scores[s] for s in sorted(scores)])) if scores else ""
            rows.append({"kind": "summary", "dgp": cfg.dgp, "family": family, "basis": basis,
                         "estimator": est, "seed": "median", "sqrt_mise": med,
                         "frac_tr_beats_plugin": frac, "status": status})
    return rows


# --------------------------------------------------------------------------- #
# double-robustness harness
# --------------------------------------------------------------------------- #

DR_ARMS = ("oracle_mu", "oracle_w", "both_corrupted")


def dr_harness(n: int = 2000, seeds: int = 20, c: float = 0.2, seed0: int = 0) -> dict[str, dict]:
    """AIPW bias on the nonlinear Gaussian generator with oracle or corrupted nuisances.

    The corrupted outcome model is the constant ``mean(Y)`` and the corrupted
    ratio is ``w = 1``.  Bias is measured against the in-sample oracle SRF of
    each draw; the Monte Carlo standard error is ``sd(bias) / sqrt(seeds)``.
    Returns, per arm, the per-seed biases, their median and the MC s.e.
    """
    shifts = ShiftFamily([ShiftSpec("percent", c)])
    bias = {arm: [] for arm in DR_ARMS}
    for k in range(seeds):
        data = gen_nonlinear(n, seed0 + k)
        psi = oracle_srf(data, shifts)[0]
        mu = data.oracle_mean(data.X, data.A)
        mu_shift = data.oracle_mean(data.X, data.shifted(shifts)[:, 0])
        w = nonlinear_density_ratio_percent(data.X, data.A, c)
        flat = np.full(data.n, data.Y.mean())
        ones = np.ones(data.n)
        arms = {"oracle_mu": Nuisances(mu, mu_shift, ones), "oracle_w": Nuisances(flat, flat, w),
                "both_corrupted": Nuisances(flat, flat, ones)}
        for arm, nu in arms.items():
            bias[arm].append(aipw_from(nu, data.Y)[0] - psi)
    out = {}
    for arm, b in bias.items():
        b = np.array(b)
        se = float(b.std(ddof=1) / math.sqrt(seeds)) if seeds > 1 else math.nan
        out[arm] = {"bias": b, "median_bias": float(np.median(b)), "mc_se": se}
    return out
