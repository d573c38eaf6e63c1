import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebcurve import drc
from ebcurve.drc import LocalFitConfig, estimate_curve, global_poly_fit, local_linear_fit, tricube


def dense_local_linear(a0, A, Y, w, span):
    """Normal equations solved directly: nearest ceil(span*N) points, tricube on d/d_k."""
    d = np.abs(A - a0)
    k = math.ceil(span * A.size)
    h = np.sort(d)[k - 1]
    kern = np.where(d < h, (1 - (d / h) ** 3) ** 3, 0.0)
    u = w * kern
    X = np.column_stack([np.ones_like(A), A - a0])
    beta = np.linalg.solve(X.T @ (X * u[:, None]), X.T @ (u * Y))
    return beta[0], beta[1]


def test_tricube_values():
    assert tricube(0.5) == pytest.approx(0.669921875)
    assert tricube(0) == 1 and tricube(1) == 0 and tricube(-1.5) == 0


@pytest.mark.parametrize("span", [0.2, 0.35, 0.7, 1.0])
def test_matches_normal_equations(rng, span):
    A = rng.uniform(0, 40, 300)
    Y = np.sin(A / 6) + rng.normal(scale=0.3, size=300)
    w = rng.exponential(size=300)
    w /= w.sum()
    for a0 in np.linspace(1, 39, 15):
        f, b0, b1 = local_linear_fit(a0, A, Y, w, LocalFitConfig(span))
        g, slope = dense_local_linear(a0, A, Y, w, span)
        assert f == pytest.approx(g, rel=1e-8, abs=1e-8)
        assert b1 == pytest.approx(slope, rel=1e-8, abs=1e-8)
        assert b0 + b1 * a0 == pytest.approx(f, abs=1e-8)


def test_curve_matches_pointwise_fits(rng):
    A = rng.gamma(3, 4, 400)
    Y = A / 10 + rng.normal(size=400)
    w = rng.exponential(size=400)
    grid = np.linspace(np.quantile(A, 0.05), np.quantile(A, 0.95), 25)
    curve = estimate_curve(A, Y, w, grid, span=0.3)
    dense = [dense_local_linear(a, A, Y, w / w.sum(), 0.3)[0] for a in grid]
    np.testing.assert_allclose(curve.estimates, dense, rtol=1e-8, atol=1e-8)


@pytest.mark.filterwarnings("ignore::ebcurve.drc.ExtrapolationWarning")
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([0.2, 0.5, 1.0]))
def test_affine_truth_reproduced(seed, c0, c1, span):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-3, 3, 60)
    w = rng.exponential(size=60)
    grid = np.linspace(A.min(), A.max(), 9)
    curve = estimate_curve(A, c0 + c1 * A, w, grid, span=span)
    np.testing.assert_allclose(curve.estimates, c0 + c1 * grid, atol=1e-8)


def test_cv_picks_large_span_for_line(rng):
    A = rng.uniform(0, 10, 200)
    assert drc.select_span_cv(A, 2 * A + 1, seed=1) == 1.0


def test_cv_is_seeded(rng):
    A = rng.uniform(0, 10, 300)
    Y = np.sin(A) + rng.normal(scale=0.5, size=300)
    assert drc.select_span_cv(A, Y, seed=5) == drc.select_span_cv(A, Y, seed=5)
    s = drc.select_span_cv(A, Y, seed=5)
    assert s < 1.0


def test_grid_outside_data_is_gap(rng):
    A = rng.uniform(5, 10, 100)
    with pytest.warns(drc.ExtrapolationWarning):
        curve = estimate_curve(A, A, None, [0.0, 7.0, 12.0], span=0.5)
    assert np.isnan(curve.estimates[[0, 2]]).all() and np.isfinite(curve.estimates[1])
    with pytest.warns(drc.ExtrapolationWarning):
        ext = estimate_curve(A, A, None, [0.0, 7.0, 12.0], span=0.5, extrapolate=True)
    np.testing.assert_allclose(ext.estimates, [0, 7, 12], atol=1e-8)


def test_default_grid_spans_high_density(rng):
    A = rng.normal(size=500)
    curve = estimate_curve(A, A**2, None, span=0.5)
    assert curve.grid.size == 100
    assert curve.grid[0] == curve.high_density_range[0] and curve.grid[-1] == curve.high_density_range[1]


def test_contrast_on_true_curve():
    from ebcurve.simbench import true_curve_main

    grid = np.arange(0.0, 46)
    curve = drc.DoseResponseCurve(grid, true_curve_main(grid), 1.0, np.zeros((46, 2)), (0, 45))
    assert drc.contrast(curve, 0, 5) == pytest.approx(0.5667, abs=1e-4)
    assert drc.contrast(curve, 0.5, 0.5) == 0
    with pytest.raises(ValueError):
        drc.contrast(curve, -1, 5)


def test_small_span_rejected():
    with pytest.raises(drc.LocalDegeneracyError):
        LocalFitConfig(0.01).neighbours(100)
    with pytest.raises(ValueError):
        LocalFitConfig(1.5)


def test_poly_fit_recovers_quadratic(rng):
    A = rng.uniform(0, 40, 200)
    Y = 0.8 + 0.15 * A - A**2 / 300
    fit = global_poly_fit(A, Y, rng.exponential(size=200), 2, [0, 20, 40])
    np.testing.assert_allclose(fit.coefficients, [0.8, 0.15, -1 / 300], atol=1e-9)
    np.testing.assert_allclose(fit.values, fit([0, 20, 40]), atol=1e-9)


def test_parse_grid():
    np.testing.assert_allclose(drc.parse_grid("4:50:100")[[0, -1]], [4, 50])
    for bad in ("4:50", "5:4:10", "a:b:c", "0:1:1"):
        with pytest.raises(ValueError):
            drc.parse_grid(bad)


def test_csv_and_json_shape(rng):
    A = rng.uniform(0, 1, 50)
    curve = estimate_curve(A, A, None, [0.2, 0.5], span=0.6)
    assert curve.to_csv().splitlines()[0] == "a0,estimate"
    boot = drc.with_bootstrap(curve, np.ones(2), np.zeros(2), np.ones(2), np.array([5, 5]))
    assert boot.to_csv().splitlines()[1].endswith(",5")
    assert '"span_used": 0.6' in boot.to_json()
