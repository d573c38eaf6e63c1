import numpy as np
import pytest

from ebcurve.dataset import DesignMatrix
from ebcurve.gps import DegenerateGPSError, fit_normal_gps


def _dm(x):
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    m = x.shape[1]
    return DesignMatrix(x, tuple(f"x{j}" for j in range(m)), tuple(f"x{j}" for j in range(m)), ("continuous",) * m)


def test_matches_explicit_density_ratio(rng):
    x = rng.normal(size=(300, 2))
    a = 1 + x @ [0.8, -0.5] + rng.normal(scale=0.7, size=300)
    fit = fit_normal_gps(_dm(x), a)
    X = np.column_stack([np.ones(300), x])
    b = np.linalg.solve(X.T @ X, X.T @ a)
    s = np.sqrt(np.mean((a - X @ b) ** 2))
    num = np.exp(-0.5 * ((a - a.mean()) / a.std()) ** 2) / a.std()
    den = np.exp(-0.5 * ((a - X @ b) / s) ** 2) / s
    w = num / den
    np.testing.assert_allclose(fit.weights, w / w.sum(), rtol=1e-9)
    np.testing.assert_allclose(fit.coefficients, b, rtol=1e-9)


def test_truncation_caps_weights(rng):
    x = rng.normal(size=(200, 1))
    a = 2 * x[:, 0] + rng.normal(size=200)
    fit = fit_normal_gps(_dm(x), a, truncate=0.9)
    assert fit.weights.max() <= fit.truncated_at + 1e-15
    assert fit.ess > fit_normal_gps(_dm(x), a).ess
    with pytest.raises(ValueError):
        fit_normal_gps(_dm(x), a, truncate=1.5)


def test_degenerate_exposure_model():
    x = np.arange(10.0)
    with pytest.raises(DegenerateGPSError):
        fit_normal_gps(_dm(x), 3 * x + 1)
    with pytest.raises(DegenerateGPSError):
        fit_normal_gps(_dm(np.column_stack([x, 2 * x])), np.sin(x))
