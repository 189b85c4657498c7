"""Shared backbone with a varying-coefficient outcome head and density-ratio heads.

Layout::

    X --backbone (dense+ReLU)--> Z --VC stack(t(A))--> eta           (outcome)
                                  \\-VC stack_j(t(A))--> log w_j      (one per shift)

A varying-coefficient (VC) layer maps ``h`` to ``h W(a) + b(a)`` where
``W(a) = sum_b coef[:, :, b] phi_b(t(a))``.  It is evaluated as one matmul of
the expanded features ``[h phi_0, ..., h phi_{B-1}]`` against the coefficient
leaf, stored basis-major as a ``(basis * in, out)`` matrix;
:meth:`TresnetModel.coefficients` gives the ``(in, out, basis)`` view.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .family import ExponentialFamily, get_family

logger = logging.getLogger(__name__)

KNOTS = (1.0 / 3.0, 2.0 / 3.0)
BASIS_KINDS = ("spline", "piecewise-linear")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "spline"

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ModelError(f"unknown basis {self.kind!r}")

    @property
    def dim(self) -> int:
        return 5 if self.kind == "spline" else 4

    def __call__(self, t) -> np.ndarray:
        """Basis matrix (len(t), dim) for normalized exposures t in [0, 1]."""
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        k1, k2 = KNOTS
        if self.kind == "spline":
            cols = [np.ones_like(t), t, t * t, np.maximum(t - k1, 0.0) ** 2, np.maximum(t - k2, 0.0) ** 2]
        else:
            cols = [np.ones_like(t), t, np.maximum(t - k1, 0.0), np.maximum(t - k2, 0.0)]
        return np.column_stack(cols)


@dataclass
class ModelConfig:
    backbone_widths: tuple[int, ...] = (32, 32)
    head_widths: tuple[int, ...] = (32,)
    basis: str = "spline"
    ratio_bound: float = 50.0  # M: log w is clamped to [-log M, log M]

    def __post_init__(self):
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        if not self.backbone_widths or min(self.backbone_widths) < 1:
            raise ModelError("backbone needs at least one layer of positive width")
        if self.head_widths and min(self.head_widths) < 1:
            raise ModelError("head widths must be positive")
        BasisSpec(self.basis)
        if not self.ratio_bound > 1.0:
            raise ModelError("ratio_bound must exceed 1")


@dataclass
class Normalizer:
    lo: float | None = None
    hi: float | None = None
    clamped: int = 0  # shifted exposures pushed back into [lo, hi]

    def fit(self, A) -> "Normalizer":
        A = np.asarray(A, dtype=np.float64)
        self.lo, self.hi = float(A.min()), float(A.max())
        return self

    def __call__(self, a) -> np.ndarray:
        if self.lo is None:
            raise ModelError("exposure normalization has not been fitted")
        a = np.asarray(a, dtype=np.float64)
        span = self.hi - self.lo
        t = (a - self.lo) / span if span > 0 else np.zeros_like(a)
        out = (t < 0) | (t > 1)
        if np.any(out):
            self.clamped += int(out.sum())
        return np.clip(t, 0.0, 1.0)


class TresnetModel:
    """Backbone + outcome head + per-shift log density-ratio heads + epsilon."""

    def __init__(self, in_dim: int, n_shifts: int, family="gaussian", config: ModelConfig | None = None,
                 shift_labels: list[str] | None = None, seed: int = 0):
        if n_shifts < 0:
            raise ModelError("n_shifts must be non-negative")
        self.in_dim = int(in_dim)
        self.n_shifts = int(n_shifts)
        self.family: ExponentialFamily = get_family(family)
        self.config = config or ModelConfig()
        self.basis = BasisSpec(self.config.basis)
        self.shift_labels = list(shift_labels) if shift_labels is not None else [f"shift{j}" for j in range(n_shifts)]
        if len(self.shift_labels) != self.n_shifts:
            raise ModelError("one label per shift required")
        self.normalizer = Normalizer()
        self.epsilon_fresh = False  # set by refit_epsilon, cleared by any parameter update
        self.fluctuation = "weighted"
        self.params: dict[str, np.ndarray] = {}
        self._masks: dict = {}  # basis matrices expanded to layer width, keyed by identity
        self._init_params(np.random.default_rng(seed))

    # parameters ----------------------------------------------------------- #

    def _init_params(self, rng: np.random.Generator) -> None:
        nb = self.basis.dim
        p = self.params
        width = self.in_dim
        for k, w in enumerate(self.config.backbone_widths):
            bound = 1.0 / math.sqrt(width)
            p[f"backbone.{k}.weight"] = rng.uniform(-bound, bound, (width, w))
            p[f"backbone.{k}.bias"] = rng.uniform(-bound, bound, (w,))
            width = w
        for head in ["outcome"] + [f"ratio.{j}" for j in range(self.n_shifts)]:
            fan = self.config.backbone_widths[-1]
            for k, w in enumerate(self.config.head_widths + (1,)):
                bound = 1.0 / math.sqrt(fan * nb)
                p[f"{head}.{k}.coef"] = rng.uniform(-bound, bound, (nb * fan, w))
                p[f"{head}.{k}.bias"] = rng.uniform(-bound, bound, (nb, w))
                fan = w
        p["epsilon"] = np.zeros(self.n_shifts)

    def shift_outcome_intercept(self, value: float) -> None:
        """Add ``value`` to the outcome head's constant term (the bias on the basis' constant column)."""
        last = len(self.config.head_widths)
        self.params[f"outcome.{last}.bias"][0, 0] += float(value)

    def parameter_names(self) -> list[str]:
        return list(self.params)

    def coefficients(self, name: str) -> np.ndarray:
        """(in, out, basis) view of a VC coefficient leaf."""
        c = self.params[name]
        return c.reshape(self.basis.dim, -1, c.shape[1]).transpose(1, 2, 0)

    @property
    def epsilon(self) -> np.ndarray:
        return self.params["epsilon"]

    @epsilon.setter
    def epsilon(self, value) -> None:
        value = np.asarray(value, dtype=np.float64).reshape(self.n_shifts)
        self.params["epsilon"] = value.copy()

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    # exposure handling ---------------------------------------------------- #

    def fit_normalization(self, A) -> None:
        self.normalizer.fit(A)

    def normalize_exposure(self, a) -> np.ndarray:
        return self.normalizer(a)

    def basis_at(self, a) -> np.ndarray:
        return self.basis(self.normalizer(a))

    # graph pieces --------------------------------------------------------- #

    def backbone(self, P: dict[str, Tensor], X) -> Tensor:
        h = X if isinstance(X, Tensor) else Tensor(X)
        if h.shape[-1] != self.in_dim:
            raise ModelError(f"expected {self.in_dim} covariates, got {h.shape[-1]}")
        for k in range(len(self.config.backbone_widths)):
            h = ad.relu(h @ P[f"backbone.{k}.weight"] + P[f"backbone.{k}.bias"])
        return h

    def _mask(self, phi: np.ndarray, width: int) -> np.ndarray:
        key = (id(phi), width)
        hit = self._masks.get(key)
        if hit is not None and hit[0] is phi:
            return hit[1]
        if len(self._masks) > 64:
            self._masks.clear()
        mask = np.repeat(phi, width, axis=1)
        self._masks[key] = (phi, mask)
        return mask

    def vc_layer(self, h: Tensor, phi: np.ndarray, coef: Tensor, bias: Tensor, activate: bool) -> Tensor:
        nb = phi.shape[1]
        expanded = ad.column_concat([h] * nb) * self._mask(phi, h.shape[1])
        y = expanded @ coef + phi @ bias
        return ad.relu(y) if activate else y

    def head(self, P: dict[str, Tensor], name: str, Z: Tensor, phi: np.ndarray) -> Tensor:
        h = Z
        depth = len(self.config.head_widths)
        for k in range(depth + 1):
            h = self.vc_layer(h, phi, P[f"{name}.{k}.coef"], P[f"{name}.{k}.bias"], activate=k < depth)
        return h

    def eta_graph(self, P, Z: Tensor, phi: np.ndarray) -> Tensor:
        """(m, 1) natural parameter."""
        return self.head(P, "outcome", Z, phi)

    def log_ratio_graph(self, P, j: int, Z: Tensor, phi: np.ndarray) -> Tensor:
        """(m, 1) clamped log density ratio for shift j."""
        return ad.clamp(self.head(P, f"ratio.{j}", Z, phi), math.log(self.config.ratio_bound))

    # numpy-level forwards ------------------------------------------------- #

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ModelError(f"expected covariates of shape (n, {self.in_dim}), got {X.shape}")
        return X

    def features(self, X) -> np.ndarray:
        with ad.no_record():
            return self.backbone(self.constants(), self._check_X(X)).values

    def outcome_forward(self, X, A, Z: np.ndarray | None = None) -> np.ndarray:
        """Natural parameter eta(X_i, A_i), shape (n,)."""
        X = self._check_X(X)
        A = np.asarray(A, dtype=np.float64).reshape(-1)
        if A.size != X.shape[0]:
            raise ModelError("X and A lengths differ")
        with ad.no_record():
            P = self.constants()
            Zt = Tensor(Z) if Z is not None else self.backbone(P, X)
            return self.eta_graph(P, Zt, self.basis_at(A)).values[:, 0]

    def predict_mean(self, X, A) -> np.ndarray:
        return self.family.mean_from_natural(self.outcome_forward(X, A))

    def ratio_forward(self, X, A, Z: np.ndarray | None = None) -> np.ndarray:
        """Clamped log w_j(X_i, A_ij); ``A`` is a vector (same for all heads) or an (n, J) matrix."""
        X = self._check_X(X)
        A = np.asarray(A, dtype=np.float64)
        if A.ndim == 1:
            A = np.repeat(A[:, None], self.n_shifts, axis=1)
        if A.shape != (X.shape[0], self.n_shifts):
            raise ModelError(f"exposures must have shape ({X.shape[0]}, {self.n_shifts})")
        with ad.no_record():
            P = self.constants()
            Zt = Tensor(Z) if Z is not None else self.backbone(P, X)
            cols = [self.log_ratio_graph(P, j, Zt, self.basis_at(A[:, j])).values[:, 0] for j in range(self.n_shifts)]
        return np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))

    # persistence ---------------------------------------------------------- #

    def describe(self) -> dict:
        return {
            "format": "tresnet-model/1",
            "in_dim": self.in_dim,
            "n_shifts": self.n_shifts,
            "family": self.family.kind,
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.config).items()},
            "shift_labels": self.shift_labels,
            "normalizer": [self.normalizer.lo, self.normalizer.hi],
            "fluctuation": self.fluctuation,
            "epsilon_fresh": self.epsilon_fresh,
        }

    def save(self, path) -> None:
        save_model(self, path)


def save_model(model: TresnetModel, path) -> None:
    """Write a model as one JSON header line followed by raw little-endian float64 data.

    The header lists every parameter's name, shape and byte offset plus an echo
    of the model configuration; the payload is the parameters concatenated in
    header order.  Output is a pure function of the model, so reruns are
    byte-identical.
    """
    header = model.describe()
    tensors, offset = [], 0
    for name, arr in model.params.items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header["tensors"] = tensors
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values())
    with open(Path(path), "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_model(path) -> TresnetModel:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ModelError(f"{path}: not a model file")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"{path}: bad model header ({exc})") from None
    if header.get("format") != "tresnet-model/1":
        raise ModelError(f"{path}: unsupported model format {header.get('format')!r}")
    cfg = ModelConfig(**header["config"])
    model = TresnetModel(header["in_dim"], header["n_shifts"], header["family"], cfg, header["shift_labels"])
    payload = raw[nl + 1:]
    for t in header["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=t["offset"]).astype(np.float64)
        model.params[t["name"]] = arr.reshape(t["shape"])
    model.normalizer.lo, model.normalizer.hi = header["normalizer"]
    model.fluctuation = header["fluctuation"]
    model.epsilon_fresh = header["epsilon_fresh"]
    return model
