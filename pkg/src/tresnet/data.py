"""Datasets, synthetic generators with counterfactual oracles, CSV I/O, MISE."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .family import get_family
from .shifts import ShiftFamily, shifted_matrix

PAIRWISE_PREFIX = "a_tilde_"


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    family: str = "gaussian"
    oracle: str | None = None  # name of a registered mean function
    pairwise: dict[str, np.ndarray] = field(default_factory=dict)
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        A = np.asarray(self.A, dtype=np.float64).reshape(-1)
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        n = A.size
        if X.shape[0] != n or Y.size != n:
            raise DataError(f"column lengths differ: X={X.shape[0]}, A={n}, Y={Y.size}")
        pw = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in self.pairwise.items()}
        for k, v in pw.items():
            if v.size != n:
                raise DataError(f"pairwise column {k!r} has length {v.size}, expected {n}")
        for name, col in [("X", X), ("A", A), ("Y", Y)] + list(pw.items()):
            if not np.all(np.isfinite(col)):
                raise DataError(f"column {name!r} has non-finite values")
        fam = get_family(self.family).kind
        if fam == "poisson" and np.any((Y < 0) | (Y != np.round(Y))):
            raise DataError("poisson outcomes must be non-negative integers")
        if fam == "bernoulli" and np.any((Y != 0) & (Y != 1)):
            raise DataError("bernoulli outcomes must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "pairwise", pw)

    @property
    def n(self) -> int:
        return self.A.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return replace(self, X=self.X[idx], A=self.A[idx], Y=self.Y[idx],
                       pairwise={k: v[idx] for k, v in self.pairwise.items()})

    def shifted(self, shifts: ShiftFamily) -> np.ndarray:
        return shifted_matrix(shifts, self.A, self.pairwise)

    def oracle_mean(self, X, A) -> np.ndarray:
        if self.oracle is None:
            raise DataError("dataset has no oracle mean function")
        return ORACLES[self.oracle](np.asarray(X, dtype=np.float64), np.asarray(A, dtype=np.float64), self.family)


# --------------------------------------------------------------------------- #
# generators
# --------------------------------------------------------------------------- #


LINEAR_POISSON_SCALE = 0.25  # log-rate a*x/4 keeps E[exp(.)] finite under the Gaussian design


def _linear_mean(X, A, family):
    if get_family(family).kind == "poisson":
        return np.exp(LINEAR_POISSON_SCALE * A * X[:, 0])
    return A * X[:, 0]


def nonlinear_eta(X, A):
    """Natural parameter of the nonlinear benchmark: smooth, confounded through x1..x4."""
    x = X
    return (0.2 + (x[:, 0] + x[:, 1] + x[:, 4]) / 3.0 + 4.0 * A * (1.0 - A)
            + np.sin(2.0 * np.pi * A) * (x[:, 2] - 0.5) + A * x[:, 3])


def _nonlinear_mean(X, A, family):
    return get_family(family).mean_from_natural(nonlinear_eta(X, A))


ORACLES: dict[str, Callable] = {"linear": _linear_mean, "nonlinear": _nonlinear_mean}


def gen_linear(n: int, seed: int = 0, noise_sd: float = 1.0, family: str = "gaussian") -> Dataset:
    """X ~ N(0,1), A ~ N(X,1), Y = AX + noise; psi under A~ = sA is s.

    ``family="poisson"`` draws Y ~ Poisson(exp(AX/4)) instead; the closed-form
    psi then no longer applies and only the empirical oracle is available.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    if noise_sd < 0:
        raise DataError("noise_sd must be >= 0")
    fam = get_family(family).kind
    if fam not in ("gaussian", "poisson"):
        raise DataError("linear generator supports gaussian and poisson outcomes")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(n)
    A = X + rng.standard_normal(n)
    if fam == "gaussian":
        Y = A * X + noise_sd * rng.standard_normal(n)
    else:
        Y = rng.poisson(np.exp(LINEAR_POISSON_SCALE * A * X)).astype(np.float64)
    gen = {"name": "linear", "n": n, "seed": seed, "noise_sd": noise_sd, "family": fam}
    return Dataset(X[:, None], A, Y, fam, "linear", generator=gen)


def nonlinear_exposure_logit(X) -> np.ndarray:
    return X[:, 0] + 2.0 * X[:, 1] - X[:, 2] - 0.5 * X[:, 3] - 0.75


def gen_nonlinear(n: int, seed: int = 0, family: str = "gaussian", noise_sd: float = 0.5) -> Dataset:
    if n < 1:
        raise DataError("n must be >= 1")
    fam = get_family(family).kind
    if fam not in ("gaussian", "poisson"):
        raise DataError("nonlinear generator supports gaussian and poisson outcomes")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 6))
    zeta = rng.standard_normal(n)
    A = 0.1 + 0.8 * expit(nonlinear_exposure_logit(X) + 0.5 * zeta)
    eta = nonlinear_eta(X, A)
    if fam == "gaussian":
        Y = eta + noise_sd * rng.standard_normal(n)
    else:
        Y = rng.poisson(np.exp(eta)).astype(np.float64)
    gen = {"name": "nonlinear", "n": n, "seed": seed, "noise_sd": noise_sd, "family": fam}
    return Dataset(X, A, Y, fam, "nonlinear", generator=gen)


def nonlinear_log_density(X, a) -> np.ndarray:
    """log p(a | x) for the nonlinear generator (logit-normal exposure); -inf off (0.1, 0.9)."""
    a = np.asarray(a, dtype=np.float64)
    u = (a - 0.1) / 0.8
    out = np.full(a.shape, -np.inf)
    ok = (u > 0) & (u < 1)
    uu = u[ok]
    z = (np.log(uu) - np.log1p(-uu) - nonlinear_exposure_logit(X)[ok]) / 0.5
    out[ok] = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(0.5) - np.log(uu * (1 - uu)) - math.log(0.8)
    return out


def nonlinear_density_ratio_percent(X, A, c: float) -> np.ndarray:
    """True w(x, a) for A~ = (1 - c) A under the nonlinear generator, evaluated at (X_i, A_i)."""
    s = 1.0 - c
    return np.exp(nonlinear_log_density(X, np.asarray(A) / s) - math.log(s) - nonlinear_log_density(X, A))


def generate(name: str, n: int, seed: int = 0, family: str = "gaussian", noise_sd: float | None = None) -> Dataset:
    if name == "linear":
        return gen_linear(n, seed, 1.0 if noise_sd is None else noise_sd, family)
    if name == "nonlinear":
        return gen_nonlinear(n, seed, family, 0.5 if noise_sd is None else noise_sd)
    raise DataError(f"unknown generator {name!r}")


# --------------------------------------------------------------------------- #
# ground truth and metrics
# --------------------------------------------------------------------------- #


def oracle_srf(dataset: Dataset, shifts: ShiftFamily) -> np.ndarray:
    """Counterfactual mean over the realized covariates for every shift."""
    if dataset.oracle is None:
        raise DataError("dataset has no oracle mean function")
    At = dataset.shifted(shifts)
    return np.array([dataset.oracle_mean(dataset.X, At[:, j]).mean() for j in range(At.shape[1])])


def mise(estimates, truths) -> float:
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    tru = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    if est.shape != tru.shape:
        raise DataError(f"estimate shape {est.shape} does not match truth shape {tru.shape}")
    return float(np.mean((est - tru) ** 2))


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    n_test = int(round(dataset.n * test_fraction))
    if n_test == 0 or n_test == dataset.n:
        raise DataError(f"split of n={dataset.n} at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def bootstrap(dataset: Dataset, seed: int) -> Dataset:
    idx = np.random.default_rng(seed).integers(0, dataset.n, dataset.n)
    return dataset.subset(idx)


# --------------------------------------------------------------------------- #
# CSV persistence
# --------------------------------------------------------------------------- #


def save_csv(dataset: Dataset, path, metadata: bool = True) -> None:
    path = Path(path)
    header = [f"x_{k + 1}" for k in range(dataset.d)] + ["a", "y"]
    header += [PAIRWISE_PREFIX + name for name in dataset.pairwise]
    cols = [dataset.X[:, k] for k in range(dataset.d)] + [dataset.A, dataset.Y] + list(dataset.pairwise.values())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    if metadata:
        write_metadata(dataset, meta_path(path))


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_metadata(dataset: Dataset, path) -> None:
    lines = [f"family={dataset.family}", f"d={dataset.d}", f"n={dataset.n}"]
    if dataset.oracle:
        lines.append(f"oracle={dataset.oracle}")
    for k, v in dataset.generator.items():
        lines.append(f"generator.{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_csv(path, family: str | None = None) -> Dataset:
    """Read x_1..x_d, a, y and optional a_tilde_<name> columns.

    A ``<path>.meta`` sidecar, when present, supplies the family tag and the
    oracle name for simulated data.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = sorted((h for h in header if h.startswith("x_")), key=lambda h: int(h[2:]) if h[2:].isdigit() else -1)
    for name in ("a", "y"):
        if name not in header:
            raise DataError(f"{path}: missing mandatory column {name!r}")
    if not xcols:
        raise DataError(f"{path}: missing covariate columns x_1..x_d")
    for k, name in enumerate(xcols):
        if name != f"x_{k + 1}":
            raise DataError(f"{path}: covariate columns must be x_1..x_d, found {name!r}")
    width = len(header)
    values = np.empty((len(rows) - 1, width))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} cells, found {len(row)}")
        for k, cell in enumerate(row):
            try:
                values[lineno - 2, k] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell {cell!r} in column {header[k]!r}") from None
    col = {h: values[:, k] for k, h in enumerate(header)}
    meta = read_metadata(meta_path(path)) if meta_path(path).exists() else {}
    fam = family or meta.get("family", "gaussian")
    gen = {k[len("generator."):]: v for k, v in meta.items() if k.startswith("generator.")}
    return Dataset(
        X=np.column_stack([col[h] for h in xcols]),
        A=col["a"],
        Y=col["y"],
        family=fam,
        oracle=meta.get("oracle") or None,
        pairwise={h[len(PAIRWISE_PREFIX):]: col[h] for h in header if h.startswith(PAIRWISE_PREFIX)},
        generator=gen,
    )
