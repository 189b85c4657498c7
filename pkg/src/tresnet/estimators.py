"""Shift-response estimators: plugin, AIPW, targeted (TR), EIF diagnostics, ensembles.

All estimators work from a :class:`Nuisances` bundle -- the outcome model at
observed and shifted exposures and the density-ratio weights -- so the same
code runs on a trained network or on externally supplied (oracle or
deliberately corrupted) columns.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, bootstrap
from .model import ModelConfig, TresnetModel
from .shifts import ShiftFamily
from .training import FluctuationError, TrainConfig, TrainingDivergence, train

logger = logging.getLogger(__name__)


class StaleFluctuationError(RuntimeError):
    """The model's eps was not refit after its last parameter change."""


@dataclass
class Nuisances:
    """Per-unit nuisance columns; ``(n, J)`` arrays have one column per shift."""

    mu_obs: np.ndarray  # mu(X_i, A_i), (n,)
    mu_shift: np.ndarray  # mu(X_i, A~_ij), (n, J)
    w_obs: np.ndarray  # w_j(X_i, A_i), (n, J)
    eta_obs: np.ndarray | None = None
    eta_shift: np.ndarray | None = None
    w_shift: np.ndarray | None = None  # w_j(X_i, A~_ij); only the clever fluctuation needs it

    def __post_init__(self):
        self.mu_obs = np.asarray(self.mu_obs, dtype=np.float64).reshape(-1)
        n = self.mu_obs.size
        self.mu_shift = np.asarray(self.mu_shift, dtype=np.float64).reshape(n, -1)
        J = self.mu_shift.shape[1]
        self.w_obs = np.broadcast_to(np.asarray(self.w_obs, dtype=np.float64).reshape(n, -1), (n, J)).copy()

    @property
    def n_shifts(self) -> int:
        return self.mu_shift.shape[1]


def model_nuisances(model: TresnetModel, dataset: Dataset, shifts: ShiftFamily) -> Nuisances:
    check_shifts(model, shifts)
    At = dataset.shifted(shifts)
    Z = model.features(dataset.X)
    eta_obs = model.outcome_forward(dataset.X, dataset.A, Z)
    eta_shift = np.column_stack([model.outcome_forward(dataset.X, At[:, j], Z) for j in range(At.shape[1])])
    w_obs = np.exp(model.ratio_forward(dataset.X, dataset.A, Z))
    w_shift = np.exp(model.ratio_forward(dataset.X, At, Z)) if model.fluctuation == "clever" else None
    fam = model.family
    return Nuisances(fam.mean_from_natural(eta_obs), fam.mean_from_natural(eta_shift), w_obs,
                     eta_obs, eta_shift, w_shift)


def check_shifts(model: TresnetModel, shifts: ShiftFamily) -> None:
    if list(shifts.labels) != list(model.shift_labels):
        raise ValueError(f"shift family {shifts.labels} differs from the model's {model.shift_labels}")


# --------------------------------------------------------------------------- #
# estimators on nuisance columns
# --------------------------------------------------------------------------- #


def plugin_from(nu: Nuisances) -> np.ndarray:
    return nu.mu_shift.mean(axis=0)


def debias_term(nu: Nuisances, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 1)
    return (nu.w_obs * (Y - nu.mu_obs[:, None])).mean(axis=0)


def aipw_from(nu: Nuisances, Y) -> np.ndarray:
    return debias_term(nu, Y) + plugin_from(nu)


def eif(psi, nu: Nuisances, Y) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit influence values phi_ij and the variance estimate var(phi_.j)/n."""
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 1)
    psi = np.asarray(psi, dtype=np.float64).reshape(1, -1)
    phi = nu.w_obs * (Y - nu.mu_obs[:, None]) + nu.mu_shift - psi
    n = phi.shape[0]
    var = phi.var(axis=0, ddof=1) / n if n > 1 else np.zeros(phi.shape[1])
    return phi, var


# --------------------------------------------------------------------------- #
# estimators on a trained model
# --------------------------------------------------------------------------- #


def plugin_srf(model: TresnetModel, dataset: Dataset, shifts: ShiftFamily) -> np.ndarray:
    return plugin_from(model_nuisances(model, dataset, shifts))


def aipw_srf(model: TresnetModel | None, dataset: Dataset, shifts: ShiftFamily,
             nuisances: Nuisances | None = None) -> np.ndarray:
    """AIPW estimate; pass ``nuisances`` to use supplied columns instead of the model."""
    nu = nuisances if nuisances is not None else model_nuisances(model, dataset, shifts)
    return aipw_from(nu, dataset.Y)


def fluctuated_eta(model: TresnetModel, nu: Nuisances) -> np.ndarray:
    """eta~ at the shifted exposures, (n, J)."""
    eps = model.epsilon[None, :]
    if model.fluctuation == "clever":
        return nu.eta_shift + eps * nu.w_shift
    return nu.eta_shift + eps


def tr_srf(model: TresnetModel, dataset: Dataset, shifts: ShiftFamily) -> np.ndarray:
    """Targeted estimate: mean of the fluctuated model at the shifted exposures."""
    if not model.epsilon_fresh:
        raise StaleFluctuationError("eps is stale; run refit_epsilon on the training data first")
    nu = model_nuisances(model, dataset, shifts)
    return model.family.mean_from_natural(fluctuated_eta(model, nu)).mean(axis=0)


def eee_residual(model: TresnetModel, dataset: Dataset, j: int | None = None):
    """mean_i w_ij (Y_i - g^{-1}(eta~_ij)) at observed exposures; all shifts when j is None."""
    Z = model.features(dataset.X)
    eta = model.outcome_forward(dataset.X, dataset.A, Z)[:, None]
    w = np.exp(model.ratio_forward(dataset.X, dataset.A, Z))
    eps = model.epsilon[None, :]
    E = eta + eps * w if model.fluctuation == "clever" else eta + eps
    res = (w * (dataset.Y[:, None] - model.family.mean_from_natural(E))).mean(axis=0)
    return res if j is None else float(res[j])


def erf_plugin(model: TresnetModel, X, a_grid) -> np.ndarray:
    """Average predicted outcome when every unit receives exposure a, for each a in the grid."""
    X = np.asarray(X, dtype=np.float64)
    Z = model.features(X)
    n = Z.shape[0]
    return np.array([model.family.mean_from_natural(model.outcome_forward(X, np.full(n, a), Z)).mean()
                     for a in np.asarray(a_grid, dtype=np.float64).reshape(-1)])


# --------------------------------------------------------------------------- #
# bundled estimate
# --------------------------------------------------------------------------- #


@dataclass
class SrfEstimate:
    labels: list[str]
    kinds: list[str]
    params: list[str]
    plugin: np.ndarray
    aipw: np.ndarray
    tr: np.ndarray
    eee_residual: np.ndarray
    eif_se: np.ndarray
    q25: np.ndarray | None = None
    q50: np.ndarray | None = None
    q75: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    COLUMNS = ("shift_kind", "shift_param", "psi_plugin", "psi_aipw", "psi_tr",
               "eee_residual", "eif_se", "q25", "q50", "q75")

    def rows(self) -> list[dict]:
        out = []
        for j in range(len(self.labels)):
            row = {"shift_kind": self.kinds[j], "shift_param": self.params[j],
                   "psi_plugin": self.plugin[j], "psi_aipw": self.aipw[j], "psi_tr": self.tr[j],
                   "eee_residual": self.eee_residual[j], "eif_se": self.eif_se[j]}
            for q in ("q25", "q50", "q75"):
                arr = getattr(self, q)
                row[q] = "" if arr is None else arr[j]
            for k, v in self.extra.items():
                row[k] = v[j]
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        cols = list(self.COLUMNS) + list(self.extra)
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.rows():
                w.writerow([_fmt(row[c]) for c in cols])


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _shift_columns(shifts: ShiftFamily) -> tuple[list[str], list[str]]:
    kinds = [s.kind for s in shifts]
    params = [s.column if s.kind == "pairwise" else f"{s.param:g}" for s in shifts]
    return kinds, params


def estimate(model: TresnetModel, dataset: Dataset, shifts: ShiftFamily) -> SrfEstimate:
    nu = model_nuisances(model, dataset, shifts)
    tr = tr_srf(model, dataset, shifts)
    _, var = eif(tr, nu, dataset.Y)
    kinds, params = _shift_columns(shifts)
    return SrfEstimate(list(shifts.labels), kinds, params, plugin_from(nu), aipw_from(nu, dataset.Y), tr,
                       eee_residual(model, dataset), np.sqrt(var))


# --------------------------------------------------------------------------- #
# bootstrap ensemble
# --------------------------------------------------------------------------- #


def _member(args):
    dataset, shifts, model_config, train_config, seed, family = args
    sample = bootstrap(dataset, seed)
    cfg = dataclasses.replace(train_config, seed=seed)
    try:
        model, _ = train(sample, shifts, model_config, cfg, family)
        return tr_srf(model, sample, shifts)
    except (TrainingDivergence, FluctuationError, FloatingPointError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


def bootstrap_ensemble(dataset: Dataset, shifts: ShiftFamily, model_config: ModelConfig | None = None,
                       train_config: TrainConfig | None = None, B: int = 30, seed: int = 0,
                       member_seeds: list[int] | None = None, jobs: int = 1, family=None) -> dict:
    """Train B models on bootstrap resamples; per-shift quartiles of the TR estimate.

    Member ``k`` resamples and initializes from ``member_seeds[k]`` (default:
    ``seed * 100003 + k``).  Diverging members are dropped; at least half must
    survive.
    """
    if B < 2:
        raise ValueError("an ensemble needs B >= 2")
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    seeds = list(member_seeds) if member_seeds is not None else [seed * 100003 + k for k in range(B)]
    if len(seeds) != B:
        raise ValueError("member_seeds must have length B")
    tasks = [(dataset, shifts, model_config, train_config, s, family) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_member, tasks))
    else:
        results = [_member(t) for t in tasks]
    failures = {k: r for k, r in enumerate(results) if isinstance(r, str)}
    for k, msg in failures.items():
        logger.warning("ensemble member %d excluded: %s", k, msg)
    good = np.array([r for r in results if not isinstance(r, str)])
    if len(good) < math.ceil(B / 2):
        raise TrainingDivergence(f"{len(failures)} of {B} ensemble members failed")
    q25, q50, q75 = np.quantile(good, [0.25, 0.5, 0.75], axis=0)
    return {"q25": q25, "q50": q50, "q75": q75, "members": good, "failures": failures}


def default_jobs(jobs: int | None) -> int:
    return max(1, jobs if jobs else (os.cpu_count() or 1))
