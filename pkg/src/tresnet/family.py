"""Exponential-family outcome models with canonical links.

Each family is described by its cumulant ``Lambda(eta)``; the inverse link is
``Lambda'(eta)`` and the per-sample negative log-likelihood (up to an
eta-free constant) is ``Lambda(eta) - y * eta``.  Dispersion is fixed at 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, xlogy

from . import autodiff as ad
from .autodiff import DomainError, Tensor

FAMILIES = ("gaussian", "poisson", "bernoulli")


@dataclass(frozen=True)
class ExponentialFamily:
    kind: str

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {FAMILIES}")

    # numpy side ----------------------------------------------------------- #

    def cumulant(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return 0.5 * eta * eta
        if self.kind == "poisson":
            return np.exp(eta)
        return np.logaddexp(0.0, eta)

    def mean_from_natural(self, eta):
        """g^{-1}(eta) = Lambda'(eta)."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return eta + 0.0
        if self.kind == "poisson":
            return np.exp(eta)
        return expit(eta)

    def mean_derivative(self, eta):
        """Lambda''(eta), the variance function on the natural scale."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return np.ones_like(eta)
        if self.kind == "poisson":
            return np.exp(eta)
        p = expit(eta)
        return p * (1.0 - p)

    def natural_from_mean(self, mu):
        """Canonical link g(mu)."""
        mu = np.asarray(mu, dtype=np.float64)
        if self.kind == "gaussian":
            return mu + 0.0
        if self.kind == "poisson":
            if np.any(mu <= 0):
                raise DomainError("poisson mean must be positive")
            return np.log(mu)
        if np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("bernoulli mean must lie in (0, 1)")
        return logit(mu)

    def check_outcomes(self, y) -> None:
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise DomainError("outcomes must be finite")
        if self.kind == "poisson" and np.any(y < 0):
            raise DomainError("poisson outcomes must be non-negative")
        if self.kind == "bernoulli" and np.any((y != 0) & (y != 1)):
            raise DomainError("bernoulli outcomes must be 0 or 1")

    def nll(self, eta, y):
        """Lambda(eta) - y*eta, elementwise."""
        self.check_outcomes(y)
        return self.cumulant(eta) - np.asarray(y, dtype=np.float64) * eta

    def conjugate(self, y):
        """Lambda*(y) = sup_eta y*eta - Lambda(eta); nll + conjugate is half the unit deviance (>= 0)."""
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "gaussian":
            return 0.5 * y * y
        if self.kind == "poisson":
            return xlogy(y, y) - y
        return np.zeros_like(y)  # y in {0, 1}

    # tape side ------------------------------------------------------------ #

    def cumulant_t(self, eta: Tensor) -> Tensor:
        if self.kind == "gaussian":
            return 0.5 * ad.square(eta)
        if self.kind == "poisson":
            return ad.exp(eta)
        return ad.softplus(eta)

    def mean_t(self, eta: Tensor) -> Tensor:
        if self.kind == "gaussian":
            return eta
        if self.kind == "poisson":
            return ad.exp(eta)
        return ad.sigmoid(eta)

    def nll_t(self, eta: Tensor, y) -> Tensor:
        return self.cumulant_t(eta) - eta * y


def get_family(family: "str | ExponentialFamily") -> ExponentialFamily:
    if isinstance(family, ExponentialFamily):
        return family
    return ExponentialFamily(str(family).strip().lower())


def cumulant(family, eta):
    return get_family(family).cumulant(eta)


def mean_from_natural(family, eta):
    return get_family(family).mean_from_natural(eta)


def natural_from_mean(family, mu):
    return get_family(family).natural_from_mean(mu)


def nll(family, eta, y):
    return get_family(family).nll(eta, y)
