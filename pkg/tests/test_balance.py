import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ebcurve import balance, solver
from ebcurve.balance import (
    conditional_slope,
    effective_sample_size,
    weighted_correlation,
    weighted_ks,
    weighted_quantile,
)

pos = st.floats(0.01, 100)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=pos), st.floats(1e-6, 1e6))
def test_ess_scale_invariant(w, c):
    e = effective_sample_size(w)
    assert e == pytest.approx(effective_sample_size(c * w), rel=1e-10)
    assert 1 - 1e-9 <= e <= w.size + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.booleans())
def test_ks_in_unit_interval(seed, n, ties):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 4, n).astype(float) if ties else rng.normal(size=n)
    w = rng.exponential(size=n)
    d = weighted_ks(x, w)
    assert 0 <= d <= 1
    assert weighted_ks(x, np.ones(n)) == pytest.approx(0, abs=1e-12)


def test_ks_binary_equals_mean_gap():
    x = np.array([0, 0, 1, 1, 1.0])
    w = np.array([3, 1, 1, 1, 2.0])
    # ECDFs only differ at 0: P_w(x=0) = 0.5 vs 0.4
    assert weighted_ks(x, w) == pytest.approx(0.1)


def test_ess_equal_weights():
    assert effective_sample_size(np.full(7, 0.3)) == pytest.approx(7)


def test_slope_example():
    x = np.array([0.0, 1, 2, 3, 4])
    a = 2 * x + 1
    beta, t, p = conditional_slope(x, a, np.ones(5))
    assert beta == pytest.approx(2)
    assert abs(t) == np.inf and p == 0


def test_slope_matches_wls(rng):
    x = rng.normal(size=80)
    a = 0.7 * x + rng.normal(size=80)
    w = rng.exponential(size=80)
    beta, t, _ = conditional_slope(x, a, w)
    wn = w / w.mean()
    X = np.column_stack([np.ones(80), x])
    xtwx = X.T @ (X * wn[:, None])
    coef = np.linalg.solve(xtwx, X.T @ (wn * a))
    resid = a - X @ coef
    s2 = wn @ resid**2 / 78
    se = np.sqrt(s2 * np.linalg.inv(xtwx)[1, 1])
    assert beta == pytest.approx(coef[1], rel=1e-10)
    assert t == pytest.approx(coef[1] / se, rel=1e-10)


def test_correlation_nan_on_constant():
    assert np.isnan(weighted_correlation(np.ones(5), np.arange(5.0), np.ones(5)))
    assert np.isnan(conditional_slope(np.ones(5), np.arange(5.0), np.ones(5))[0])


def test_weighted_quantile_equal_weights():
    x = np.arange(1.0, 101)
    np.testing.assert_allclose(weighted_quantile(x, np.ones(100), [0.01, 0.5, 0.99]), [1, 50, 99])


def test_report_after_eb(sim_main):
    dm = sim_main.design()
    sol = solver.entropy_balance(dm, sim_main.A, 2)
    rep = balance.balance_report(dm, sim_main.A, sol.weights, "A")
    assert rep.max_abs_weighted_correlation() < 1e-6
    for cov in rep.covariates:
        assert abs(cov.weighted.beta) < 1e-6
        assert cov.weighted.mean == pytest.approx(cov.unweighted.mean)
    assert rep.ess == pytest.approx(sol.ess)
    back = balance.BalanceReport.from_dict(json.loads(rep.to_json()))
    assert back.to_dict() == rep.to_dict()
    assert "Effective sample size" in rep.to_table()
    assert rep.to_csv().count("\n") == len(rep.covariates) + 2
    raw = rep.covariates[0].unweighted
    assert raw.beta == pytest.approx(conditional_slope(sim_main.X1, sim_main.A, np.ones(sim_main.A.size))[0])
