"""Weights -> span selection -> curve, as one configurable step."""

from __future__ import annotations

import re
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import drc, gps, solver
from .dataset import DesignMatrix

METHODS = ("unweighted", "eb_1", "eb_2", "eb_3", "eb_4", "normal_gps")
_EB = re.compile(r"^eb_([1-4])$")


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "eb_2"
    exposure_moments: int | None = None  # defaults to the covariate order
    cross_powers: bool = False
    bounds: tuple[float, float] = solver.DEFAULT_BOUNDS
    tol: float = solver.DEFAULT_TOL
    max_iter: int = solver.DEFAULT_MAX_ITER
    truncate: float | None = None
    span: float | None = None  # fixed span; None means cross-validate
    span_grid: tuple[float, ...] = drc.DEFAULT_SPANS
    folds: int = 2
    cv_seed: int = 0
    weighted_cv: bool = True
    extrapolate: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "span_grid", tuple(float(s) for s in self.span_grid))

    @property
    def moments(self) -> int | None:
        m = _EB.match(self.method)
        return int(m.group(1)) if m else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = list(d["bounds"])
        d["span_grid"] = list(d["span_grid"])
        return d


@dataclass
class WeightResult:
    method: str
    weights: np.ndarray
    converged: bool
    ess: float
    diagnostics: dict = field(default_factory=dict)
    solution: object = None


def compute_weights(dm: DesignMatrix, exposure, cfg: PipelineConfig) -> WeightResult:
    a = np.asarray(exposure, dtype=float)
    n = a.size
    if cfg.method == "unweighted":
        w = np.full(n, 1.0 / n)
        return WeightResult(cfg.method, w, True, float(n), {"method": "unweighted", "n": n, "ess": float(n)})
    if cfg.method == "normal_gps":
        fit = gps.fit_normal_gps(dm, a, truncate=cfg.truncate)
        return WeightResult(cfg.method, fit.weights, True, fit.ess, fit.to_dict(), fit)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solver.BoundHitWarning)
        sol = solver.entropy_balance(
            dm,
            a,
            cfg.moments,
            cfg.exposure_moments,
            cross_powers=cfg.cross_powers,
            bounds=cfg.bounds,
            tol=cfg.tol,
            max_iter=cfg.max_iter,
        )
    if sol.at_bound.any():
        warnings.warn(
            f"{int(sol.at_bound.sum())} dual multipliers at the box boundary; check balance", solver.BoundHitWarning, stacklevel=2
        )
    diag = {"method": cfg.method, **sol.to_dict()}
    return WeightResult(cfg.method, sol.weights, sol.converged, sol.ess, diag, sol)


def fit_curve(A, Y, w, grid, cfg: PipelineConfig, cv_seed=None) -> drc.DoseResponseCurve:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", drc.ExtrapolationWarning)
        return drc.estimate_curve(
            A,
            Y,
            w,
            grid,
            span=cfg.span,
            span_grid=cfg.span_grid,
            folds=cfg.folds,
            seed=cfg.cv_seed if cv_seed is None else cv_seed,
            weighted_error=cfg.weighted_cv,
            extrapolate=cfg.extrapolate,
        )


def run_pipeline(dm: DesignMatrix, A, Y, grid, cfg: PipelineConfig, cv_seed=None):
    """Weights then curve; returns ``(WeightResult, DoseResponseCurve)``."""
    wr = compute_weights(dm, A, cfg)
    curve = fit_curve(A, Y, wr.weights, grid, cfg, cv_seed)
    return wr, curve
