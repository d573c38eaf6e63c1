"""Stabilized inverse-probability weights from a normal linear exposure model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataset import DesignMatrix


class DegenerateGPSError(ValueError):
    pass


@dataclass(frozen=True)
class GpsWeights:
    weights: np.ndarray
    numerator_params: tuple[float, float]  # mean, sd of the marginal exposure fit
    coefficients: np.ndarray  # intercept first
    residual_sd: float
    truncated_at: float | None = None

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def to_dict(self) -> dict:
        return {
            "method": "normal_gps",
            "n": int(self.weights.size),
            "ess": self.ess,
            "numerator_mean": self.numerator_params[0],
            "numerator_sd": self.numerator_params[1],
            "denominator_coefficients": [float(c) for c in self.coefficients],
            "denominator_residual_sd": self.residual_sd,
            "truncated_at": self.truncated_at,
        }


def fit_normal_gps(dm: DesignMatrix, exposure, truncate: float | None = None) -> GpsWeights:
    """``w_i ~ phi(A_i; mean A, sd A) / phi(A_i; x_i b, s_resid)``, normalized.

    ``b`` is the OLS fit of the exposure on the raw covariates plus an
    intercept.  Both standard deviations use the maximum-likelihood (1/N)
    form.  ``truncate`` caps weights at that quantile before normalizing.
    """
    a = np.asarray(exposure, dtype=float)
    x = dm.raw_columns()
    n, m = x.shape
    if a.shape != (n,):
        raise ValueError("exposure length differs from design rows")
    if n <= m + 1:
        raise DegenerateGPSError(f"need more than {m + 1} rows for {m} covariates")
    design = np.column_stack([np.ones(n), x])
    beta, _, rank, _ = np.linalg.lstsq(design, a, rcond=None)
    if rank < m + 1:
        raise DegenerateGPSError("singular covariate design in the exposure model")
    resid = a - design @ beta
    s_resid = float(np.sqrt(np.mean(resid**2)))
    mean_a, sd_a = float(a.mean()), float(a.std())
    if s_resid <= 1e-12 * max(1.0, sd_a) or sd_a == 0:
        raise DegenerateGPSError("exposure model has zero residual spread")
    log_w = stats.norm.logpdf(a, mean_a, sd_a) - stats.norm.logpdf(a, design @ beta, s_resid)
    w = np.exp(log_w - log_w.max())
    cap = None
    if truncate is not None:
        if not 0 < truncate < 1:
            raise ValueError("truncation quantile must lie in (0, 1)")
        cap = float(np.quantile(w, truncate))
        w = np.minimum(w, cap)
        cap = cap / w.sum()
    w = w / w.sum()
    return GpsWeights(w, (mean_a, sd_a), beta, s_resid, cap)
