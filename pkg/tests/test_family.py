import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from tresnet import autodiff as ad
from tresnet.autodiff import DomainError, Tensor
from tresnet.family import FAMILIES, cumulant, get_family, mean_from_natural, natural_from_mean, nll


def test_cumulant_values():
    assert cumulant("poisson", 0.0) == 1.0
    assert cumulant("gaussian", 2.0) == 2.0
    assert cumulant("bernoulli", 0.0) == pytest.approx(math.log(2), abs=1e-12)
    assert np.isfinite(cumulant("bernoulli", 800.0))


def test_inverse_link_values():
    assert mean_from_natural("poisson", 1.0) == pytest.approx(math.e, abs=1e-12)
    assert mean_from_natural("gaussian", -3.5) == -3.5
    assert mean_from_natural("bernoulli", 0.0) == 0.5


def test_link_values_and_domain():
    assert natural_from_mean("poisson", 1.0) == 0.0
    assert natural_from_mean("bernoulli", 0.5) == 0.0
    with pytest.raises(DomainError):
        natural_from_mean("poisson", 0.0)
    with pytest.raises(DomainError):
        natural_from_mean("bernoulli", 1.0)


@pytest.mark.parametrize("kind,mu", [
    ("gaussian", lambda r: r.normal(0, 10, 1000)),
    ("poisson", lambda r: r.uniform(1e-3, 100, 1000)),
    ("bernoulli", lambda r: r.uniform(1e-3, 1 - 1e-3, 1000)),
])
def test_link_round_trip(kind, mu):
    m = mu(np.random.default_rng(7))
    assert np.max(np.abs(mean_from_natural(kind, natural_from_mean(kind, m)) - m)) < 1e-12


def test_nll_values_and_domain():
    assert nll("poisson", 0.0, 2.0) == 1.0
    eta = np.linspace(-3, 3, 13)
    y = 1.7
    assert np.allclose(nll("gaussian", eta, y) - 0.5 * (eta - y) ** 2, -0.5 * y * y, atol=1e-12)
    with pytest.raises(DomainError):
        nll("poisson", 0.0, -1.0)
    with pytest.raises(DomainError):
        nll("bernoulli", 0.0, 0.5)


def test_nll_argmin_is_link_of_sample_mean():
    y = np.random.default_rng(5).poisson(3.2, 400).astype(float)
    res = minimize_scalar(lambda e: float(np.mean(nll("poisson", e, y))), bracket=(-1, 3), method="golden",
                          tol=1e-10)
    assert res.x == pytest.approx(math.log(y.mean()), abs=1e-6)


@pytest.mark.parametrize("kind", FAMILIES)
def test_cumulant_derivative_is_mean(kind):
    fam = get_family(kind)
    eta = np.linspace(-10, 10, 201)
    h = 1e-5
    num = (fam.cumulant(eta + h) - fam.cumulant(eta - h)) / (2 * h)
    assert np.max(np.abs(num - fam.mean_from_natural(eta)) / np.maximum(1, np.abs(num))) < 1e-6


@pytest.mark.parametrize("kind", FAMILIES)
def test_mean_derivative(kind):
    fam = get_family(kind)
    eta = np.linspace(-5, 5, 21)
    h = 1e-6
    num = (fam.mean_from_natural(eta + h) - fam.mean_from_natural(eta - h)) / (2 * h)
    assert np.allclose(fam.mean_derivative(eta), num, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("kind", FAMILIES)
def test_tape_versions_agree(kind):
    fam = get_family(kind)
    eta = np.linspace(-4, 4, 9)
    y = np.where(np.arange(9) % 2 == 0, 1.0, 0.0)
    assert np.allclose(fam.cumulant_t(Tensor(eta)).values, fam.cumulant(eta), atol=1e-12)
    assert np.allclose(fam.mean_t(Tensor(eta)).values, fam.mean_from_natural(eta), atol=1e-12)
    assert np.allclose(fam.nll_t(Tensor(eta), y).values, fam.nll(eta, y), atol=1e-12)
    assert ad.grad_check(lambda e: ad.sum(fam.nll_t(e, y)), eta) < 1e-4


@pytest.mark.parametrize("kind", FAMILIES)
def test_conjugate_makes_loss_nonnegative(kind):
    fam = get_family(kind)
    rng = np.random.default_rng(1)
    y = {"gaussian": rng.normal(0, 2, 50), "poisson": rng.poisson(3, 50).astype(float),
         "bernoulli": rng.integers(0, 2, 50).astype(float)}[kind]
    for eta in np.linspace(-4, 4, 17):
        assert np.all(fam.nll(eta, y) + fam.conjugate(y) >= -1e-12)


def test_unknown_family():
    with pytest.raises(ValueError):
        get_family("gamma")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-20, 20), st.floats(0.01, 3), st.integers(0, 1))
def test_nll_is_convex(kind, eta, h, y):
    fam = get_family(kind)
    f = lambda e: float(fam.nll(e, float(y)))  # noqa: E731
    assert f(eta - h) + f(eta + h) - 2 * f(eta) >= -1e-12 * max(1.0, abs(f(eta)))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(-30, 30), st.floats(1e-3, 5))
def test_inverse_link_is_increasing(kind, eta, h):
    fam = get_family(kind)
    assert fam.mean_from_natural(eta + h) >= fam.mean_from_natural(eta)
