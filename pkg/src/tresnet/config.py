"""Flat ``key = value`` run configuration shared by the command-line tools.

One key per line, ``#`` starts a comment, blank lines are ignored.  Every key
maps to a :class:`RunConfig` field; unknown keys and unparseable values raise
:class:`ConfigError`.  Tuples are written comma-separated (``head_widths = 32``
or ``backbone_widths = 32,32``); optional numbers accept ``none``.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .data import ORACLES
from .family import FAMILIES
from .model import BASIS_KINDS, ModelConfig, ModelError
from .shifts import ShiftError, ShiftFamily, parse_shifts
from .training import FLUCTUATIONS, TrainConfig

ESTIMATORS = ("plugin", "aipw", "tr")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data source: a generator name or "csv"
    dgp: str = "linear"
    data_path: str = ""
    n: int = 1000
    noise_sd: float | None = None  # None: generator default
    family: str = "gaussian"  # outcome family of the data
    fit_family: str = ""  # family used for fitting; empty means ``family``
    shifts: str = "grid:percent:0:0.5:5"
    # model
    backbone_widths: tuple[int, ...] = (32, 32)
    head_widths: tuple[int, ...] = (32,)
    basis: str = "spline"
    ratio_bound: float = 50.0
    # training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1000
    batch_size: int | None = None
    alpha: float = 1.0
    beta0: float = 1.0
    detach_ratio_in_tr: bool = False
    tr_deviance: bool = True
    init_intercept: bool = True
    fluctuation: str = "weighted"
    seed: int = 0
    # estimation, benchmark and ensemble
    model_path: str = ""  # empty: <out>/model.bin
    estimators: tuple[str, ...] = ESTIMATORS
    bases: tuple[str, ...] = ()  # benchmark sweep; empty means (basis,)
    fit_families: tuple[str, ...] = ()  # benchmark sweep; empty means (fit family,)
    seeds: int = 10
    ensemble_size: int = 0

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------- #

    def validate(self) -> None:
        if self.dgp not in (*ORACLES, "csv"):
            raise ConfigError(f"dgp must be one of {sorted(ORACLES) + ['csv']}, got {self.dgp!r}")
        if self.dgp == "csv" and not self.data_path:
            raise ConfigError("dgp = csv needs data_path")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.noise_sd is not None and self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        for fam in (self.family, self.resolved_fit_family, *self.fit_families):
            if fam not in FAMILIES:
                raise ConfigError(f"unknown family {fam!r}")
        for b in (self.basis, *self.bases):
            if b not in BASIS_KINDS:
                raise ConfigError(f"unknown basis {b!r}; expected one of {BASIS_KINDS}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if self.fluctuation not in FLUCTUATIONS:
            raise ConfigError(f"fluctuation must be one of {FLUCTUATIONS}")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.ensemble_size < 0 or self.ensemble_size == 1:
            raise ConfigError("ensemble_size must be 0 (off) or >= 2")
        self.shift_family()
        self.model_config()
        self.train_config()

    # -- derived objects ---------------------------------------------------- #

    @property
    def resolved_fit_family(self) -> str:
        return self.fit_family or self.family

    def shift_family(self) -> ShiftFamily:
        try:
            return parse_shifts(self.shifts)
        except ShiftError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, basis: str | None = None) -> ModelConfig:
        try:
            return ModelConfig(self.backbone_widths, self.head_widths, basis or self.basis, self.ratio_bound)
        except ModelError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int | None = None) -> TrainConfig:
        try:
            return TrainConfig(lr=self.lr, betas=(self.beta1, self.beta2), epochs=self.epochs,
                               batch_size=self.batch_size, alpha=self.alpha, beta0=self.beta0,
                               detach_ratio_in_tr=self.detach_ratio_in_tr, fluctuation=self.fluctuation,
                               seed=self.seed if seed is None else seed, tr_deviance=self.tr_deviance,
                               init_intercept=self.init_intercept)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))


# --------------------------------------------------------------------------- #
# text round trip
# --------------------------------------------------------------------------- #


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(name: str, hint, text: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in typing.get_args(hint) if a is not type(None)][0]
        return None if text.lower() in ("", "none") else _parse_value(name, inner, text)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return tuple(_parse_value(name, inner, t) for t in text.split(",") if t.strip())
    try:
        if hint is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return text


_HINTS = typing.get_type_hints(RunConfig)


def parse_assignments(pairs: dict[str, str]) -> dict:
    out = {}
    for key, text in pairs.items():
        if key not in _HINTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, _HINTS[key], text)
    return out


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key not in _HINTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        pairs[key] = value
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``key -> text`` overrides on top."""
    pairs: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        pairs.update(parse_lines(text.splitlines(), str(path)))
    pairs.update(overrides or {})
    return RunConfig(**parse_assignments(pairs))
