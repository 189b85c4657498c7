"""Exposure shifts: declarative specs, grids, and a closed-form test oracle.

Shift grammar (config files and CLI)::

    percent:0.30            A~ = (1 - 0.30) A
    cutoff:9.0              A~ = min(A, 9.0)
    pairwise:cut9           A~ = dataset column ``a_tilde_cut9``
    grid:percent:0:0.5:20   20 equally spaced percent shifts on [0, 0.5]
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

KINDS = ("percent", "cutoff", "pairwise")


class ShiftError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    param: float = 0.0
    column: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShiftError(f"unknown shift kind {self.kind!r}")
        if self.kind == "percent" and not 0.0 <= self.param < 1.0:
            raise ShiftError(f"percent reduction must lie in [0, 1), got {self.param}")
        if self.kind == "cutoff" and not math.isfinite(self.param):
            raise ShiftError("cutoff must be finite")
        if self.kind == "pairwise" and not self.column:
            raise ShiftError("pairwise shift needs a column name")

    @property
    def label(self) -> str:
        if self.kind == "pairwise":
            return f"pairwise:{self.column}"
        return f"{self.kind}:{self.param:g}"

    def __str__(self) -> str:
        return self.label


class ShiftFamily(tuple):
    """Ordered, non-empty tuple of distinct shifts."""

    def __new__(cls, specs: Iterable[ShiftSpec]):
        specs = tuple(specs)
        if not specs:
            raise ShiftError("a shift family needs at least one shift")
        if len(set(specs)) != len(specs):
            raise ShiftError("shifts in a family must be distinct")
        return super().__new__(cls, specs)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self]


def apply_shift(spec: ShiftSpec, A, pairwise_source=None) -> np.ndarray:
    """Shifted exposures for ``spec``.

    ``pairwise_source`` is either the A~ column itself or a mapping of column
    name to array (as carried by :class:`~tresnet.data.Dataset`).
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise ShiftError("exposures must be finite")
    if spec.kind == "percent":
        if pairwise_source is not None and not isinstance(pairwise_source, Mapping):
            raise ShiftError("pairwise column supplied for a percent shift")
        return (1.0 - spec.param) * A
    if spec.kind == "cutoff":
        if pairwise_source is not None and not isinstance(pairwise_source, Mapping):
            raise ShiftError("pairwise column supplied for a cutoff shift")
        return np.minimum(A, spec.param)
    if pairwise_source is None:
        raise ShiftError(f"missing pairwise column {spec.column!r}")
    if isinstance(pairwise_source, Mapping):
        if spec.column not in pairwise_source:
            raise ShiftError(f"missing pairwise column {spec.column!r}")
        pairwise_source = pairwise_source[spec.column]
    col = np.asarray(pairwise_source, dtype=np.float64)
    if col.shape != A.shape:
        raise ShiftError(f"pairwise column {spec.column!r} has length {col.size}, expected {A.size}")
    if not np.all(np.isfinite(col)):
        raise ShiftError(f"pairwise column {spec.column!r} has non-finite values")
    return col.copy()


def shifted_matrix(shifts: ShiftFamily, A, pairwise_source=None) -> np.ndarray:
    """n x |shifts| matrix whose column j is A~ under shift j."""
    return np.column_stack([apply_shift(s, A, pairwise_source) for s in shifts])


def shift_grid(kind: str, lo: float, hi: float, k: int) -> ShiftFamily:
    if k < 1:
        raise ShiftError("grid needs k >= 1")
    if lo > hi:
        raise ShiftError("grid needs lo <= hi")
    if kind not in ("percent", "cutoff"):
        raise ShiftError(f"cannot build a grid of {kind!r} shifts")
    params = [lo] if k == 1 else np.linspace(lo, hi, k).tolist()
    return ShiftFamily(ShiftSpec(kind, float(c)) for c in params)


def parse_shift(text: str) -> list[ShiftSpec]:
    """Parse one grammar item; grids expand to several specs."""
    parts = [p.strip() for p in text.strip().split(":")]
    try:
        if parts[0] == "grid" and len(parts) == 5:
            return list(shift_grid(parts[1], float(parts[2]), float(parts[3]), int(parts[4])))
        if parts[0] == "pairwise" and len(parts) == 2:
            return [ShiftSpec("pairwise", column=parts[1])]
        if parts[0] in ("percent", "cutoff") and len(parts) == 2:
            return [ShiftSpec(parts[0], float(parts[1]))]
    except ValueError as exc:
        raise ShiftError(f"bad shift {text!r}: {exc}") from None
    raise ShiftError(f"bad shift {text!r}")


def parse_shifts(items: str | Iterable[str]) -> ShiftFamily:
    if isinstance(items, str):
        items = [s for s in items.replace(";", ",").split(",") if s.strip()]
    specs: list[ShiftSpec] = []
    for item in items:
        specs.extend(parse_shift(item))
    return ShiftFamily(specs)


def positivity_violations(A, A_tilde, margin: float = 0.05) -> int:
    """Count shifted exposures outside the observed range padded by ``margin`` * range."""
    A = np.asarray(A, dtype=np.float64)
    lo, hi = A.min(), A.max()
    pad = margin * (hi - lo)
    At = np.asarray(A_tilde, dtype=np.float64)
    return int(np.sum((At < lo - pad) | (At > hi + pad)))


def screen_positivity(A, shifted: np.ndarray, labels: list[str] | None = None) -> dict[str, int]:
    """Warn about shifts pushing exposures outside the observed support."""
    shifted = np.atleast_2d(np.asarray(shifted, dtype=np.float64).T).T
    labels = labels or [str(j) for j in range(shifted.shape[1])]
    report = {}
    for j, label in enumerate(labels):
        k = positivity_violations(A, shifted[:, j])
        report[label] = k
        if k:
            logger.warning("shift %s: %d shifted exposures outside the observed support", label, k)
    return report


def oracle_log_ratio_percent(c, m, s, a):
    """log p~(a|x)/p(a|x) for A|X ~ N(m, s^2) under A~ = (1 - c) A."""
    c = np.asarray(c, dtype=np.float64)
    if np.any(c >= 1.0) or np.any(c < 0.0):
        raise ShiftError("percent reduction must lie in [0, 1)")
    scale = 1.0 - c
    a = np.asarray(a, dtype=np.float64)
    return norm.logpdf(a / scale, loc=m, scale=s) - np.log(scale) - norm.logpdf(a, loc=m, scale=s)
