import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tresnet.shifts import (ShiftError, ShiftFamily, ShiftSpec, apply_shift, oracle_log_ratio_percent,
                            parse_shifts, positivity_violations, screen_positivity, shift_grid, shifted_matrix)

finite_exposures = arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3))


def test_apply_shift_examples():
    A = np.array([3.0, -1.0, 7.5])
    assert np.array_equal(apply_shift(ShiftSpec("percent", 0.0), A), A)
    assert np.array_equal(apply_shift(ShiftSpec("cutoff", 12.0), np.array([8.0, 14.0, 12.0])), [8.0, 12.0, 12.0])
    assert np.allclose(apply_shift(ShiftSpec("percent", 0.3), np.array([10.0, 20.0])), [7.0, 14.0], atol=1e-12)


def test_pairwise_column():
    A = np.array([1.0, 2.0])
    col = np.array([0.5, 0.7])
    spec = ShiftSpec("pairwise", column="cut9")
    assert np.array_equal(apply_shift(spec, A, col), col)
    assert np.array_equal(apply_shift(spec, A, {"cut9": col}), col)
    with pytest.raises(ShiftError):
        apply_shift(spec, A)
    with pytest.raises(ShiftError):
        apply_shift(spec, A, {"other": col})


def test_spec_validation():
    with pytest.raises(ShiftError):
        ShiftSpec("percent", 1.0)
    with pytest.raises(ShiftError):
        ShiftSpec("percent", -0.1)
    with pytest.raises(ShiftError):
        ShiftSpec("cutoff", math.inf)
    with pytest.raises(ShiftError):
        ShiftSpec("pairwise")
    with pytest.raises(ShiftError):
        ShiftSpec("additive", 1.0)


def test_family_invariants():
    with pytest.raises(ShiftError):
        ShiftFamily([])
    with pytest.raises(ShiftError):
        ShiftFamily([ShiftSpec("percent", 0.1), ShiftSpec("percent", 0.1)])


def test_grid_examples():
    g = shift_grid("percent", 0.0, 0.5, 20)
    assert len(g) == 20 and g[0].param == 0.0 and g[-1].param == 0.5
    c = shift_grid("cutoff", 6.0, 16.0, 11)
    assert [s.param for s in c] == pytest.approx(list(range(6, 17)))
    one = shift_grid("percent", 0.2, 0.2, 1)
    assert len(one) == 1 and one[0].param == 0.2
    with pytest.raises(ShiftError):
        shift_grid("percent", 0.0, 0.5, 0)


def test_grammar():
    fam = parse_shifts("percent:0.30, cutoff:9.0; pairwise:cut9")
    assert [s.kind for s in fam] == ["percent", "cutoff", "pairwise"]
    assert fam[0].param == 0.3 and fam[1].param == 9.0 and fam[2].column == "cut9"
    assert len(parse_shifts("grid:percent:0:0.5:20")) == 20
    for bad in ("percent", "percent:x", "grid:percent:0:1", "scale:2"):
        with pytest.raises(ShiftError):
            parse_shifts(bad)


def test_shifted_matrix_columns():
    A = np.array([1.0, 5.0, 10.0])
    M = shifted_matrix(parse_shifts("percent:0.5,cutoff:4"), A)
    assert M.shape == (3, 2)
    assert np.array_equal(M[:, 1], [1.0, 4.0, 4.0])


def test_positivity_screen(caplog):
    A = np.linspace(0.0, 10.0, 11)
    assert positivity_violations(A, A) == 0
    assert positivity_violations(A, A - 2.0) == 2  # -2 and -1 fall below -0.5
    report = screen_positivity(A, np.column_stack([A, A - 2.0]), ["same", "down"])
    assert report == {"same": 0, "down": 2}
    assert "down" in caplog.text


def test_oracle_log_ratio_examples():
    assert np.all(oracle_log_ratio_percent(0.0, 0.3, 1.2, np.linspace(-3, 3, 7)) == 0.0)
    assert oracle_log_ratio_percent(0.5, 0.0, 1.0, 0.0) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(ShiftError):
        oracle_log_ratio_percent(1.0, 0.0, 1.0, 0.0)


def test_oracle_log_ratio_matches_histogram():
    rng = np.random.default_rng(0)
    c, m, s = 0.4, 0.5, 1.0
    A = rng.normal(m, s, 1_000_000)
    At = (1 - c) * A
    edges = np.arange(-3.0, 4.0, 0.1)
    h_obs, _ = np.histogram(A, edges)
    h_shift, _ = np.histogram(At, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    # 1e4 draws per bin keeps binomial noise in the ratio near 1.4%; at 1e3 it is ~4.5%,
    # which would make the 5% band a one-sigma coin flip on the sparsest bins
    ok = (h_obs >= 10_000) & (h_shift >= 10_000)
    assert ok.sum() >= 20
    ratio = h_shift[ok] / h_obs[ok]
    oracle = np.exp(oracle_log_ratio_percent(c, m, s, centers[ok]))
    assert np.max(np.abs(ratio / oracle - 1.0)) < 0.05


@settings(max_examples=50, deadline=None)
@given(finite_exposures, st.floats(0, 0.99))
def test_percent_preserves_order_and_length(A, c):
    At = apply_shift(ShiftSpec("percent", c), A)
    assert At.shape == A.shape and np.all(np.isfinite(At))
    order = np.argsort(A, kind="stable")
    assert np.all(np.diff(At[order]) >= 0)


@settings(max_examples=50, deadline=None)
@given(finite_exposures, st.floats(-1e3, 1e3))
def test_cutoff_bounds(A, c):
    At = apply_shift(ShiftSpec("cutoff", c), A)
    assert np.all(At <= c) and np.all(At <= A)
    assert np.array_equal(apply_shift(ShiftSpec("cutoff", 1e9), A), A)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(-10, 10))
def test_identity_oracle_ratio(m, s, a):
    assert oracle_log_ratio_percent(0.0, m, s, a) == 0.0
