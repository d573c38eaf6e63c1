"""Whole-pipeline bootstrap for dose-response curves.

Each replicate resamples rows with replacement, re-solves the weights,
re-selects the span by cross-validation and refits the curve.  Pointwise
standard errors are the standard deviations of the replicate curves and the
interval is ``estimate +/- 2 se``.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import drc
from .dataset import Dataset, DesignMatrix, encode
from .pipeline import PipelineConfig, compute_weights, fit_curve

FAILURE_WARN_FRACTION = 0.2


class DegradedInferenceWarning(UserWarning):
    """Too many bootstrap replicates failed for the intervals to be trusted."""


def default_threads() -> int:
    env = os.environ.get("EBCURVE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class BootstrapResult:
    grid: np.ndarray
    point_estimates: np.ndarray
    se: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    B: int
    n_available: np.ndarray
    replicate_failures: list[tuple[int, str]]
    seed: int
    span_used: float
    replicate_spans: np.ndarray
    interval: str = "normal"
    replicate_curves: np.ndarray | None = field(default=None, repr=False)
    point_curve: drc.DoseResponseCurve | None = field(default=None, repr=False)

    @property
    def n_failed(self) -> int:
        return len(self.replicate_failures)

    def to_curve(self) -> drc.DoseResponseCurve:
        return drc.with_bootstrap(
            self.point_curve,
            self.se,
            self.lo,
            self.hi,
            self.n_available,
            bootstrap_B=self.B,
            bootstrap_seed=self.seed,
            bootstrap_failures=self.n_failed,
            interval=self.interval,
        )

    def to_csv(self) -> str:
        return self.to_curve().to_csv()

    def summary(self) -> dict:
        return {
            "B": self.B,
            "seed": self.seed,
            "interval": self.interval,
            "span_used": self.span_used,
            "replicate_failures": [{"replicate": b, "reason": r} for b, r in self.replicate_failures],
            "replicate_spans": [float(s) for s in self.replicate_spans],
        }

    def replicates_csv(self) -> str:
        lines = ["replicate," + ",".join(repr(float(g)) for g in self.grid)]
        for b, row in enumerate(self.replicate_curves):
            lines.append(f"{b}," + ",".join("" if np.isnan(v) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _replicate_seed(seed: int, b: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(b,))


def _one_replicate(dm, A, Y, grid, cfg, seed, b, idx=None):
    rng = np.random.default_rng(_replicate_seed(seed, b))
    n = A.size
    if idx is None:
        idx = rng.integers(0, n, n)
    cv_seed = int(rng.integers(0, 2**63 - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            wr = compute_weights(dm.take(idx), A[idx], cfg)
        except (ValueError, np.linalg.LinAlgError) as exc:
            return None, np.nan, f"weights failed: {exc}"
        if not wr.converged:
            return None, np.nan, "weights did not converge"
        try:
            curve = fit_curve(A[idx], Y[idx], wr.weights, grid, cfg, cv_seed)
        except ValueError as exc:
            return None, np.nan, f"curve failed: {exc}"
    return curve.estimates, curve.span_used, ""


def _run_chunk(args):
    dm, A, Y, grid, cfg, seed, indices, forced = args
    out = []
    for b in indices:
        out.append(_one_replicate(dm, A, Y, grid, cfg, seed, b, None if forced is None else forced[b]))
    return out


def bootstrap_arrays(
    dm: DesignMatrix,
    A,
    Y,
    cfg: PipelineConfig,
    grid=None,
    B: int = 100,
    seed: int = 0,
    threads: int = 1,
    percentile: bool = False,
    keep_replicates: bool = False,
    resample_indices=None,
) -> BootstrapResult:
    """Bootstrap on an encoded design.

    Taking rows of the encoded matrix is the same as re-encoding the
    resampled table, except that a categorical level absent from a resample
    shows up as a constant dummy column, which the constraint builder drops.
    ``resample_indices`` (B x N) overrides the random draws.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    wr = compute_weights(dm, A, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", drc.ExtrapolationWarning)
        point = fit_curve(A, Y, wr.weights, grid, cfg)
    grid = point.grid
    forced = None if resample_indices is None else np.asarray(resample_indices)
    if forced is not None and forced.shape != (B, A.size):
        raise ValueError("resample_indices must have shape (B, N)")

    threads = max(1, int(threads))
    if threads == 1:
        results = _run_chunk((dm, A, Y, grid, cfg, seed, range(B), forced))
    else:
        chunks = [list(c) for c in np.array_split(np.arange(B), min(B, threads * 4)) if len(c)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(_run_chunk, [(dm, A, Y, grid, cfg, seed, c, forced) for c in chunks])
            results = [r for part in parts for r in part]

    curves = np.full((B, grid.size), np.nan)
    spans = np.full(B, np.nan)
    failures = []
    for b, (est, span, reason) in enumerate(results):
        if est is None:
            failures.append((b, reason))
            continue
        curves[b] = est
        spans[b] = span
    if len(failures) > FAILURE_WARN_FRACTION * B:
        warnings.warn(
            f"{len(failures)} of {B} bootstrap replicates failed; intervals are unreliable",
            DegradedInferenceWarning,
            stacklevel=2,
        )
    avail = (~np.isnan(curves)).sum(axis=0)
    se = np.full(grid.size, np.nan)
    ok = avail >= 2
    se[ok] = np.nanstd(curves[:, ok], axis=0, ddof=1)
    est = point.estimates
    if percentile:
        lo = np.full(grid.size, np.nan)
        hi = np.full(grid.size, np.nan)
        lo[ok] = np.nanpercentile(curves[:, ok], 2.5, axis=0)
        hi[ok] = np.nanpercentile(curves[:, ok], 97.5, axis=0)
    else:
        lo, hi = est - 2 * se, est + 2 * se
    return BootstrapResult(
        grid=grid,
        point_estimates=est,
        se=se,
        lo=lo,
        hi=hi,
        B=B,
        n_available=avail,
        replicate_failures=failures,
        seed=seed,
        span_used=point.span_used,
        replicate_spans=spans,
        interval="percentile" if percentile else "normal",
        replicate_curves=curves if keep_replicates else None,
        point_curve=point,
    )


def bootstrap_curve(
    data: Dataset,
    cfg: PipelineConfig,
    grid=None,
    B: int = 100,
    seed: int = 0,
    threads: int = 1,
    **kwargs,
) -> BootstrapResult:
    """Bootstrap the full pipeline on a cohort; see :func:`bootstrap_arrays`."""
    return bootstrap_arrays(encode(data), data.exposure, data.outcome, cfg, grid, B, seed, threads, **kwargs)


def result_json(result: BootstrapResult) -> str:
    payload = result.to_curve().to_dict()
    payload["bootstrap"] = result.summary()
    return json.dumps(payload, sort_keys=True, indent=1)
