"""Weighted local linear regression for population dose-response curves.

Each evaluation point ``a0`` gets its own straight-line fit minimizing

    sum_i w_i K(a0, A_i) (Y_i - b0 - b1 A_i)^2

where ``w`` are balancing weights and ``K`` is the tricube kernel on the
distance to ``a0`` normalized by the distance of the ``ceil(span * N)``-th
nearest observation (the loess neighbourhood rule).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .balance import weighted_quantile

DEFAULT_SPANS = tuple(np.round(np.arange(0.2, 1.01, 0.1), 10))
HIGH_DENSITY = (0.01, 0.99)


class LocalDegeneracyError(ValueError):
    """A local fit has fewer than three points or no spread in the exposure."""


class ExtrapolationWarning(UserWarning):
    pass


def tricube(u):
    u = np.abs(np.asarray(u, dtype=float))
    return np.where(u < 1.0, (1.0 - u**3) ** 3, 0.0)


@dataclass(frozen=True)
class LocalFitConfig:
    span: float = 0.5
    kernel: str = "tricube"  # "uniform" sets K = 1 inside the neighbourhood
    degree: int = 1

    def __post_init__(self):
        if not 0 < self.span <= 1:
            raise ValueError("span must lie in (0, 1]")
        if self.kernel not in ("tricube", "uniform"):
            raise ValueError("kernel must be 'tricube' or 'uniform'")
        if self.degree != 1:
            raise ValueError("only local linear fits (degree 1) are supported")

    def neighbours(self, n: int) -> int:
        k = math.ceil(self.span * n - 1e-12)
        if k < 3:
            raise LocalDegeneracyError(f"span {self.span} keeps {k} of {n} points; need at least 3")
        return min(k, n)


@njit(cache=True)
def _fit_sorted(a0s, xs, ws, ys, k, uniform, fhat, slope):
    # a0s and xs ascending: the k-nearest window only moves right
    n = xs.size
    lo = 0
    for m in range(a0s.size):
        a0 = a0s[m]
        while lo + k < n and a0 - xs[lo] > xs[lo + k] - a0:
            lo += 1
        hi = lo + k
        h = max(a0 - xs[lo], xs[hi - 1] - a0)
        if h <= 0.0:
            continue
        start = lo
        while start > 0 and a0 - xs[start - 1] <= h:
            start -= 1
        while hi < n and xs[hi] - a0 <= h:
            hi += 1
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        t0 = 0.0
        t1 = 0.0
        support = 0
        for j in range(start, hi):
            d = xs[j] - a0
            u = abs(d) / h
            if uniform:
                kern = 1.0 if u <= 1.0 else 0.0
            elif u < 1.0:
                t = 1.0 - u * u * u
                kern = t * t * t
            else:
                kern = 0.0
            wk = kern * ws[j]
            if wk <= 0.0:
                continue
            support += 1
            s0 += wk
            s1 += wk * d
            s2 += wk * d * d
            t0 += wk * ys[j]
            t1 += wk * d * ys[j]
        det = s0 * s2 - s1 * s1
        if support < 3 or s0 <= 0.0 or s2 <= 0.0 or det <= 1e-12 * s0 * s2:
            continue
        b1 = (s0 * t1 - s1 * t0) / det
        fhat[m] = (t0 - b1 * s1) / s0
        slope[m] = b1


def _local_coefs(a0, A, Y, w, spans, kernel="tricube"):
    """Local fits at every ``a0`` for every span.

    Returns arrays ``(fhat, slope)`` of shape (len(a0), len(spans)); failed
    fits are ``nan``.  ``fhat`` is the fitted line evaluated at ``a0``.
    """
    a0 = np.asarray(a0, dtype=float)
    q_order = np.argsort(a0, kind="stable")
    a0_sorted = np.ascontiguousarray(a0[q_order])
    order = np.argsort(A, kind="stable")
    xs = np.ascontiguousarray(A[order])
    ws = np.ascontiguousarray(w[order])
    ys = np.ascontiguousarray(Y[order])
    n = A.size
    fhat = np.full((a0.size, len(spans)), np.nan)
    slope = np.full_like(fhat, np.nan)
    for s, span in enumerate(spans):
        k = min(n, math.ceil(span * n - 1e-12))
        if k < 3:
            continue
        f_col = np.full(a0.size, np.nan)
        b_col = np.full(a0.size, np.nan)
        _fit_sorted(a0_sorted, xs, ws, ys, k, kernel == "uniform", f_col, b_col)
        fhat[q_order, s] = f_col
        slope[q_order, s] = b_col
    return fhat, slope


def _prep(A, Y, w):
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.shape != A.shape or A.ndim != 1:
        raise ValueError("exposure and outcome must be vectors of equal length")
    if w is None:
        w = np.full(A.size, 1.0 / A.size)
    w = np.asarray(w, dtype=float)
    if w.shape != A.shape or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be nonnegative, length N, with positive sum")
    return A, Y, w / w.sum()


def local_linear_fit(a0: float, A, Y, w, cfg: LocalFitConfig) -> tuple[float, float, float]:
    """Fit at one point; returns ``(fhat, b0, b1)`` with ``fhat = b0 + b1 * a0``."""
    A, Y, w = _prep(A, Y, w)
    cfg.neighbours(A.size)
    f, b1 = _local_coefs(np.array([a0], float), A, Y, w, [cfg.span], cfg.kernel)
    if np.isnan(f[0, 0]):
        raise LocalDegeneracyError(f"local fit at a0={a0:g} is rank deficient")
    fhat, slope = float(f[0, 0]), float(b1[0, 0])
    return fhat, fhat - slope * a0, slope


def cv_span_errors(A, Y, w=None, folds: int = 2, span_grid=DEFAULT_SPANS, seed=0, weighted_error: bool = True):
    """Out-of-fold squared prediction error for each span.

    Folds come from a seeded random permutation.  ``inf`` marks spans that
    could not predict every held-out point.
    """
    A, Y, w = _prep(A, Y, w)
    if folds < 2:
        raise ValueError("need at least two folds")
    spans = [float(s) for s in span_grid]
    if not spans or any(not 0 < s <= 1 for s in spans):
        raise ValueError("span grid must be non-empty within (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(A.size)
    fold_of = np.empty(A.size, dtype=int)
    fold_of[perm] = np.arange(A.size) % folds
    err = np.zeros(len(spans))
    score_w = w if weighted_error else np.full(A.size, 1.0 / A.size)
    for f in range(folds):
        test = fold_of == f
        train = ~test
        if train.sum() < 3 or not w[train].sum() > 0:
            err[:] = np.inf
            break
        pred, _ = _local_coefs(A[test], A[train], Y[train], w[train] / w[train].sum(), spans)
        resid2 = (Y[test][:, None] - pred) ** 2
        e = score_w[test] @ np.where(np.isnan(resid2), 0.0, resid2)
        e[np.isnan(pred).any(axis=0)] = np.inf
        err += e
    return np.array(spans), err


def select_span_cv(A, Y, w=None, folds: int = 2, span_grid=DEFAULT_SPANS, seed=0, weighted_error: bool = True) -> float:
    """Span minimizing cross-validated error; near-ties go to the largest span."""
    spans, err = cv_span_errors(A, Y, w, folds, span_grid, seed, weighted_error)
    finite = np.isfinite(err)
    if not finite.any():
        raise LocalDegeneracyError("cross-validation failed for every span")
    best = err[finite].min()
    _, Y_, w_ = _prep(A, Y, w)
    scale = float(w_ @ Y_**2) or 1.0
    tied = finite & (err <= best * (1 + 1e-9) + 1e-14 * scale)
    return float(spans[tied].max())


@dataclass
class DoseResponseCurve:
    grid: np.ndarray
    estimates: np.ndarray
    span_used: float
    local_coefs: np.ndarray  # (len(grid), 2): intercept, slope in raw exposure units
    high_density_range: tuple[float, float]
    se: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    n_available: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"a0": self.grid, "estimate": self.estimates}
        if self.se is not None:
            cols.update(se=self.se, lo=self.lo, hi=self.hi)
        if self.n_available is not None:
            cols["n_replicates"] = self.n_available
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        lines = [",".join(cols)]
        for i in range(self.grid.size):
            lines.append(",".join(_fmt(cols[c][i]) for c in cols))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = {k: [_json_num(v) for v in vals] for k, vals in self.columns().items()}
        out["span_used"] = self.span_used
        out["high_density_range"] = list(map(float, self.high_density_range))
        out["local_intercept"] = [_json_num(v) for v in self.local_coefs[:, 0]]
        out["local_slope"] = [_json_num(v) for v in self.local_coefs[:, 1]]
        out["meta"] = self.meta
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _json_num(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return None if math.isnan(v) else v


def high_density_range(A, w=None, probs=HIGH_DENSITY) -> tuple[float, float]:
    A, _, w = _prep(A, np.zeros_like(np.asarray(A, dtype=float)), w)
    lo, hi = weighted_quantile(A, w, probs)
    return float(lo), float(hi)


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:count"`` to an evenly spaced grid."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise ValueError(f"grid {text!r} must look like lo:hi:count") from None
    if count < 2 or not lo < hi:
        raise ValueError("grid needs lo < hi and at least two points")
    return np.linspace(lo, hi, count)


def estimate_curve(
    A,
    Y,
    w=None,
    grid=None,
    span: float | None = None,
    *,
    span_grid=DEFAULT_SPANS,
    folds: int = 2,
    seed=0,
    weighted_error: bool = True,
    extrapolate: bool = False,
    n_grid: int = 100,
) -> DoseResponseCurve:
    """Dose-response curve on ``grid``.

    Without ``span`` the span is picked by :func:`select_span_cv`.  Grid
    points outside ``[min A, max A]`` become gaps unless ``extrapolate``;
    points outside the weighted 1%-99% exposure range only raise a warning.
    Rank-deficient local fits also become gaps.
    """
    A, Y, w = _prep(A, Y, w)
    hd = high_density_range(A, w)
    if grid is None:
        grid = np.linspace(hd[0], hd[1], n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a strictly increasing vector")
    if span is None:
        span = select_span_cv(A, Y, w, folds=folds, span_grid=span_grid, seed=seed, weighted_error=weighted_error)
    cfg = LocalFitConfig(span)
    cfg.neighbours(A.size)
    fhat, slope = _local_coefs(grid, A, Y, w, [span], cfg.kernel)
    fhat, slope = fhat[:, 0], slope[:, 0]
    outside = (grid < A.min()) | (grid > A.max())
    if outside.any() and not extrapolate:
        fhat[outside] = np.nan
        slope[outside] = np.nan
    beyond = (grid < hd[0]) | (grid > hd[1])
    if beyond.any():
        warnings.warn(
            f"{int(beyond.sum())} grid points lie outside the high-density exposure range [{hd[0]:.4g}, {hd[1]:.4g}]",
            ExtrapolationWarning,
            stacklevel=2,
        )
    coefs = np.column_stack([fhat - slope * grid, slope])
    return DoseResponseCurve(grid, fhat, float(span), coefs, hd)


@dataclass(frozen=True)
class PolyFit:
    coefficients: np.ndarray  # ascending powers of the raw exposure
    grid: np.ndarray | None
    values: np.ndarray | None

    def __call__(self, a):
        return np.polynomial.polynomial.polyval(np.asarray(a, dtype=float), self.coefficients)


def global_poly_fit(A, Y, w=None, degree: int = 2, grid=None) -> PolyFit:
    """Weighted least-squares polynomial in the exposure."""
    A, Y, w = _prep(A, Y, w)
    if A.size <= degree + 1:
        raise ValueError("need more observations than polynomial coefficients")
    center, spread = A.mean(), A.std() or 1.0
    z = (A - center) / spread
    design = np.vander(z, degree + 1, increasing=True)
    root = np.sqrt(w)
    coef_z, _, rank, _ = np.linalg.lstsq(design * root[:, None], Y * root, rcond=None)
    if rank < degree + 1:
        raise np.linalg.LinAlgError("singular design in polynomial fit")
    # convert from powers of z back to powers of A
    poly_z = np.polynomial.Polynomial(coef_z)
    poly_a = poly_z(np.polynomial.Polynomial([-center / spread, 1.0 / spread]))
    coefs = np.zeros(degree + 1)
    coefs[: poly_a.coef.size] = poly_a.coef
    if grid is None:
        return PolyFit(coefs, None, None)
    grid = np.asarray(grid, dtype=float)
    return PolyFit(coefs, grid, poly_z((grid - center) / spread))


def contrast(curve: DoseResponseCurve, a: float, a_prime: float) -> float:
    """``f(a') - f(a)``, interpolating linearly between grid points."""
    g = curve.grid
    for v in (a, a_prime):
        if not g[0] <= v <= g[-1]:
            raise ValueError(f"{v:g} lies outside the curve grid [{g[0]:g}, {g[-1]:g}]")
    est = curve.estimates

    def at(v):
        i = int(np.searchsorted(g, v))
        idx = [i] if g[i] == v else [i - 1, i]
        if np.isnan(est[idx]).any():
            raise ValueError(f"curve has a gap at {v:g}")
        if len(idx) == 1:
            return float(est[i])
        t = (v - g[i - 1]) / (g[i] - g[i - 1])
        return float((1 - t) * est[i - 1] + t * est[i])

    return at(a_prime) - at(a)


def with_bootstrap(curve: DoseResponseCurve, se, lo, hi, n_available=None, **meta) -> DoseResponseCurve:
    return replace(curve, se=se, lo=lo, hi=hi, n_available=n_available, meta={**curve.meta, **meta})
