"""Empirical risks, the combined targeted-regularization objective, and training.

Risks on a batch of size m with J shifts::

    outcome  (1/m)      sum_i       Lambda(eta_i) - Y_i eta_i
    ratio    (1/(2mJ))  sum_i sum_j softplus(-l_j(X_i, A~_ij)) + softplus(l_j(X_i, A_i))
    tr       (1/(mJ))   sum_i sum_j w_ij [Lambda(eta_i + eps_j) - (eta_i + eps_j) Y_i]
    total    outcome + alpha * ratio + beta_n * tr,   beta_n = beta0 / sqrt(n)

where ``l_j = log w_j`` is the clamped ratio-head output.  With
``fluctuation="clever"`` the tr term instead perturbs ``eta_i + eps_j w_ij`` and
drops the weight in front of the loss; both versions share the estimating
equation ``mean_i w_ij (Y_i - g^{-1}(eta~_ij)) = 0`` at their eps minimizer.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Dataset
from .family import ExponentialFamily, get_family
from .model import ModelConfig, TresnetModel
from .shifts import ShiftFamily, screen_positivity

logger = logging.getLogger(__name__)

FLUCTUATIONS = ("weighted", "clever")
EPS_BRACKET = 30.0


class TrainingDivergence(RuntimeError):
    pass


class FluctuationError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 1000
    batch_size: int | None = None  # None: full batch up to 5000 rows, else 256
    alpha: float = 1.0
    beta0: float = 1.0
    detach_ratio_in_tr: bool = False
    tr_deviance: bool = True  # offset the tr loss by Lambda*(Y) so it is bounded below in w
    init_intercept: bool = True  # start the outcome head at g(mean Y)
    fluctuation: str = "weighted"
    seed: int = 0
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.alpha < 0 or self.beta0 < 0:
            raise ValueError("alpha and beta0 must be non-negative")
        if self.fluctuation not in FLUCTUATIONS:
            raise ValueError(f"fluctuation must be one of {FLUCTUATIONS}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def beta_n(self, n: int) -> float:
        return self.beta0 / math.sqrt(n)

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 5000 else 256


@dataclass
class Batch:
    X: np.ndarray
    Y: np.ndarray  # (m, 1)
    phi_obs: np.ndarray  # (m, B) basis at observed exposures
    phi_shift: list[np.ndarray] = field(default_factory=list)  # per shift, (m, B) at A~_j

    @property
    def m(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.Y[idx], self.phi_obs[idx], [p[idx] for p in self.phi_shift])


def make_batch(model: TresnetModel, X, A, Y, shifted=None) -> Batch:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 1)
    phi_shift = []
    if shifted is not None:
        shifted = np.asarray(shifted, dtype=np.float64).reshape(X.shape[0], -1)
        phi_shift = [model.basis_at(shifted[:, j]) for j in range(shifted.shape[1])]
    return Batch(X, Y, model.basis_at(A), phi_shift)


def dataset_batch(model: TresnetModel, dataset: Dataset, shifts: ShiftFamily | None) -> Batch:
    At = dataset.shifted(shifts) if shifts is not None else None
    return make_batch(model, dataset.X, dataset.A, dataset.Y, At)


# --------------------------------------------------------------------------- #
# risks
# --------------------------------------------------------------------------- #


class _Pass:
    """Shared forward pieces for one batch; built lazily so unused heads cost nothing."""

    def __init__(self, model: TresnetModel, P: dict[str, Tensor], batch: Batch):
        self.model, self.P, self.batch = model, P, batch
        self.Z = model.backbone(P, batch.X)
        self.eta = model.eta_graph(P, self.Z, batch.phi_obs)
        self._neg = self._pos = None

    def ratio_logits(self, with_shifted: bool):
        if self._neg is not None and (self._pos is not None or not with_shifted):
            return self._pos, self._neg
        model, P, b = self.model, self.P, self.batch
        J = model.n_shifts
        if with_shifted:
            if len(b.phi_shift) != J:
                raise ValueError(f"batch carries {len(b.phi_shift)} shifted exposure columns, model has {J} heads")
            m = b.m
            Z2 = ad.row_gather(self.Z, np.concatenate([np.arange(m), np.arange(m)]))
            cols = [model.log_ratio_graph(P, j, Z2, np.vstack([b.phi_shift[j], b.phi_obs])) for j in range(J)]
            L = ad.column_concat(cols)
            self._pos = ad.row_gather(L, np.arange(m))
            self._neg = ad.row_gather(L, np.arange(m, 2 * m))
        else:
            self._neg = ad.column_concat([model.log_ratio_graph(P, j, self.Z, b.phi_obs) for j in range(J)])
        return self._pos, self._neg

    def outcome(self) -> Tensor:
        fam = self.model.family
        return ad.mean(fam.nll_t(self.eta, self.batch.Y))

    def ratio(self) -> Tensor:
        pos, neg = self.ratio_logits(True)
        return 0.5 * (ad.mean(ad.softplus(-pos)) + ad.mean(ad.softplus(neg)))

    def tr(self, fluctuation: str = "weighted", detach: bool = False, deviance: bool = False) -> Tensor:
        _, neg = self.ratio_logits(self._pos is not None)
        W = ad.exp(neg)
        if detach:
            W = Tensor(W.values)
        fam: ExponentialFamily = self.model.family
        eps = self.P["epsilon"]
        Y = self.batch.Y
        if fluctuation == "weighted":
            loss = fam.nll_t(self.eta + eps, Y)
        else:
            loss = fam.nll_t(self.eta + eps * W, Y)
        if deviance:
            # eta-free, so gradients in eta and eps (and the estimating equation) are unchanged
            loss = loss + fam.conjugate(Y)
        return ad.mean(W * loss) if fluctuation == "weighted" else ad.mean(loss)


def _params(model: TresnetModel, P) -> dict[str, Tensor]:
    return model.constants() if P is None else P


def outcome_risk(model: TresnetModel, batch: Batch, P=None) -> Tensor:
    model.family.check_outcomes(batch.Y)
    return _Pass(model, _params(model, P), batch).outcome()


def ratio_risk(model: TresnetModel, batch: Batch, P=None) -> Tensor:
    return _Pass(model, _params(model, P), batch).ratio()


def tr_risk(model: TresnetModel, batch: Batch, P=None, fluctuation: str | None = None,
            detach: bool = False, deviance: bool = False) -> Tensor:
    """Targeted-regularization risk; ``deviance=True`` adds the eta-free Lambda*(Y) offset."""
    model.family.check_outcomes(batch.Y)
    return _Pass(model, _params(model, P), batch).tr(fluctuation or model.fluctuation, detach, deviance)


def total_objective(model: TresnetModel, batch: Batch, config: TrainConfig, n: int | None = None,
                    P=None) -> tuple[Tensor, dict[str, float]]:
    """outcome + alpha*ratio + beta_n*tr; returns the scalar and its components.

    ``n`` is the training-set size entering beta_n (defaults to the batch size).
    """
    model.family.check_outcomes(batch.Y)
    fp = _Pass(model, _params(model, P), batch)
    beta = config.beta_n(n or batch.m)
    total = fp.outcome()
    parts = {"outcome_risk": float(total.values), "ratio_risk": math.nan, "tr_risk": math.nan}
    if model.n_shifts:
        if config.alpha > 0:
            r = fp.ratio()
            parts["ratio_risk"] = float(r.values)
            total = total + config.alpha * r
        if beta > 0:
            t = fp.tr(config.fluctuation, config.detach_ratio_in_tr, config.tr_deviance)
            parts["tr_risk"] = float(t.values)
            total = total + beta * t
    parts["total"] = float(total.values)
    return total, parts


# --------------------------------------------------------------------------- #
# optimizer and training loop
# --------------------------------------------------------------------------- #


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "outcome_risk", "ratio_risk", "tr_risk", "total")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])


def train(dataset: Dataset, shifts: ShiftFamily | None, model_config: ModelConfig | None = None,
          train_config: TrainConfig | None = None, family=None) -> tuple[TresnetModel, History]:
    """Fit a model by Adam on the combined objective, then refit eps exactly."""
    mcfg = model_config or ModelConfig()
    cfg = train_config or TrainConfig()
    fam = get_family(family or dataset.family)
    fam.check_outcomes(dataset.Y)
    if dataset.n < 1:
        raise ValueError("empty dataset")
    labels = list(shifts.labels) if shifts is not None else []
    model = TresnetModel(dataset.d, len(labels), fam, mcfg, labels, seed=cfg.seed)
    model.fluctuation = cfg.fluctuation
    model.fit_normalization(dataset.A)
    if cfg.init_intercept:
        model.shift_outcome_intercept(intercept_start(fam, dataset.Y))
    At = None
    if shifts is not None:
        At = dataset.shifted(shifts)
        screen_positivity(dataset.A, At, labels)
    full = make_batch(model, dataset.X, dataset.A, dataset.Y, At)
    if model.normalizer.clamped:
        logger.warning("%d shifted exposures clamped to the training exposure range", model.normalizer.clamped)

    n = dataset.n
    bs = cfg.resolved_batch_size(n)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params, cfg.lr, cfg.betas, cfg.adam_eps)
    history = History()
    names = model.parameter_names()
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(n) if bs >= n else rng.permutation(n)
        sums = dict.fromkeys(History.COLUMNS[1:], 0.0)
        for start in range(0, n, bs):
            batch = full if bs >= n else full.take(order[start:start + bs])
            tape = Tape()
            with ad.recording(tape):
                P = {k: tape.leaf(model.params[k]) for k in names}
                total, parts = total_objective(model, batch, cfg, n, P)
            if not math.isfinite(parts["total"]):
                raise TrainingDivergence(
                    f"non-finite objective at epoch {epoch} (outcome={parts['outcome_risk']}, "
                    f"ratio={parts['ratio_risk']}, tr={parts['tr_risk']}); try a smaller learning rate")
            g = ad.backward(tape, total)
            opt.step(model.params, {k: g[P[k].node] for k in names})
            for k in sums:
                sums[k] += parts[k] * batch.m
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        history.rows.append(row)
        if not all(np.isfinite(model.params[k]).all() for k in names):
            raise TrainingDivergence(f"non-finite parameters after epoch {epoch}")
    model.epsilon_fresh = False
    refit_epsilon(model, dataset)
    return model, history


def intercept_start(family: ExponentialFamily, Y) -> float:
    """g(mean Y), with the mean nudged inside the family's domain."""
    ybar = float(np.mean(Y))
    if family.kind == "poisson":
        ybar = max(ybar, 1e-3)
    elif family.kind == "bernoulli":
        ybar = min(max(ybar, 1e-3), 1.0 - 1e-3)
    return float(family.natural_from_mean(ybar))


# --------------------------------------------------------------------------- #
# exact eps refit
# --------------------------------------------------------------------------- #


def fluctuation_score(eps: float, eta, w, y, family, fluctuation: str = "weighted") -> float:
    """d/d eps of the tr risk: mean_i w_i (g^{-1}(eta~_i) - y_i)."""
    fam = get_family(family)
    E = eta + eps * w if fluctuation == "clever" else eta + eps
    return float(np.mean(w * (fam.mean_from_natural(E) - y)))


def solve_fluctuation(eta, w, y, family, fluctuation: str = "weighted", tol: float = 1e-12,
                      bracket: float = EPS_BRACKET) -> float:
    """Root of the monotone eps score by bisection on [-bracket, bracket]."""
    eta = np.asarray(eta, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lo, hi = -bracket, bracket
    f_lo = fluctuation_score(lo, eta, w, y, family, fluctuation)
    f_hi = fluctuation_score(hi, eta, w, y, family, fluctuation)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo > 0 or f_hi < 0:
        raise FluctuationError(
            f"eps score has no sign change on [{lo}, {hi}] (score {f_lo:.3g} .. {f_hi:.3g}); "
            "density-ratio weights or outcomes look pathological")
    best, f_best = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        f_mid = fluctuation_score(mid, eta, w, y, family, fluctuation)
        if abs(f_mid) < abs(f_best):
            best, f_best = mid, f_mid
        if abs(f_mid) < tol:
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return best


def refit_epsilon(model: TresnetModel, dataset: Dataset) -> np.ndarray:
    """Solve each shift's eps so the weighted residual equation holds."""
    if model.n_shifts == 0:
        model.epsilon_fresh = True
        return model.epsilon
    Z = model.features(dataset.X)
    eta = model.outcome_forward(dataset.X, dataset.A, Z)
    w = np.exp(model.ratio_forward(dataset.X, dataset.A, Z))
    eps = [solve_fluctuation(eta, w[:, j], dataset.Y, model.family, model.fluctuation) for j in range(model.n_shifts)]
    model.epsilon = eps
    model.epsilon_fresh = True
    return model.epsilon
