"""Simulation studies with a known population dose-response curve.

Two scenarios share covariates and exposure:

    X1 ~ N(-0.5, 1), X2 ~ N(1, 1), X3 ~ Bernoulli(0.3)
    A  ~ noncentral chi-square(df=3, ncp=5|X1| + 6|X2| + 3|X3|)

``main`` has outcome ``-(A-5)(A+5)/300 + A(X1^2 + X2^2)/25 + X1 + X2 + X3 + e``
with true curve ``-(a-5)(a+5)/300 + 0.13 a + 0.8``.  ``no_effect`` has
``X1 + X1^2 + X2 + X2^2 + X1 X2 + X3 + e`` and a flat truth of 3.55.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import balance, drc
from .bootstrap import bootstrap_arrays
from .dataset import Dataset, DesignMatrix
from .pipeline import METHODS, PipelineConfig, compute_weights, fit_curve

SCENARIOS = ("main", "no_effect")
P3 = 0.3
NO_EFFECT_MEAN = 3.55
PAPER_LABELS = {
    "unweighted": "Unweighted",
    "eb_1": "Entropy Balancing (1)",
    "eb_2": "Entropy Balancing (2)",
    "eb_3": "Entropy Balancing (3)",
    "eb_4": "Entropy Balancing (4)",
    "normal_gps": "Linear Model",
}
EXTERNAL_ROWS = tuple(f"CBPS - Nonparametric: ({k})" for k in range(1, 5))


def noncentral_chisquare(df: float, ncp, rng: np.random.Generator) -> np.ndarray:
    """Poisson mixture: K ~ Poisson(ncp/2), then chi-square with df + 2K."""
    ncp = np.asarray(ncp, dtype=float)
    k = rng.poisson(ncp / 2.0)
    return rng.chisquare(df + 2.0 * k)


def true_curve_main(a):
    a = np.asarray(a, dtype=float)
    return -(a - 5.0) * (a + 5.0) / 300.0 + 0.13 * a + 0.8


def true_curve_noeffect(a):
    return np.full_like(np.asarray(a, dtype=float), NO_EFFECT_MEAN)


@dataclass(frozen=True)
class SimData:
    X1: np.ndarray
    X2: np.ndarray
    X3: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    mu_A: np.ndarray
    scenario: str

    def truth(self, a):
        return true_curve_main(a) if self.scenario == "main" else true_curve_noeffect(a)

    def design(self) -> DesignMatrix:
        return DesignMatrix(
            np.column_stack([self.X1, self.X2, self.X3]),
            ("X1", "X2", "X3"),
            ("X1", "X2", "X3"),
            ("continuous", "continuous", "binary"),
        )

    def dataset(self) -> Dataset:
        cov = pd.DataFrame({"X1": self.X1, "X2": self.X2, "X3": self.X3})
        return Dataset(self.Y, self.A, cov, {"X1": "continuous", "X2": "continuous", "X3": "binary"})


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _covariates_and_exposure(n: int, rng: np.random.Generator):
    if n < 1:
        raise ValueError("n must be positive")
    x1 = rng.normal(-0.5, 1.0, n)
    x2 = rng.normal(1.0, 1.0, n)
    x3 = rng.binomial(1, P3, n).astype(float)
    mu = 5 * np.abs(x1) + 6 * np.abs(x2) + 3 * np.abs(x3)
    a = noncentral_chisquare(3.0, mu, rng)
    return x1, x2, x3, mu, a


def outcome_main(a, x1, x2, x3, eps):
    return -(a - 5) * (a + 5) / 300 + a * (x1**2 + x2**2) / 25 + x1 + x2 + x3 + eps


def outcome_noeffect(x1, x2, x3, eps):
    return x1 + x1**2 + x2 + x2**2 + x1 * x2 + x3 + eps


def gen_main(n: int, seed=None) -> SimData:
    rng = _rng(seed)
    x1, x2, x3, mu, a = _covariates_and_exposure(n, rng)
    y = outcome_main(a, x1, x2, x3, rng.normal(0.0, 1.0, n))
    return SimData(x1, x2, x3, a, y, mu, "main")


def gen_noeffect(n: int, seed=None) -> SimData:
    """Same covariate and exposure draws as :func:`gen_main` for the same seed."""
    rng = _rng(seed)
    x1, x2, x3, mu, a = _covariates_and_exposure(n, rng)
    y = outcome_noeffect(x1, x2, x3, rng.normal(0.0, 1.0, n))
    return SimData(x1, x2, x3, a, y, mu, "no_effect")


def generate(scenario: str, n: int, seed=None) -> SimData:
    if scenario == "main":
        return gen_main(n, seed)
    if scenario == "no_effect":
        return gen_noeffect(n, seed)
    raise ValueError(f"unknown scenario {scenario!r}")


@dataclass(frozen=True)
class SimConfig:
    n_per_rep: int = 1000
    reps: int = 200
    scenario: str = "main"
    methods: tuple[str, ...] = METHODS
    grid_lo: float = 0.0
    grid_hi: float = 45.0
    grid_step: float = 1.0
    seed: int = 20210101
    span_grid: tuple[float, ...] = drc.DEFAULT_SPANS
    folds: int = 2
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if not 0 <= self.grid_lo < self.grid_hi <= 45:
            raise ValueError("grid must lie within [0, 45]")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods: {bad}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "span_grid", tuple(float(s) for s in self.span_grid))

    @property
    def grid(self) -> np.ndarray:
        count = int(round((self.grid_hi - self.grid_lo) / self.grid_step)) + 1
        return np.linspace(self.grid_lo, self.grid_hi, count)

    @property
    def reg_degree(self) -> int:
        return 2 if self.scenario == "main" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(d["methods"])
        d["span_grid"] = list(d["span_grid"])
        return d


def _stream(seed: int, rep: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(rep, purpose))


def rep_data(cfg: SimConfig, rep: int) -> SimData:
    return generate(cfg.scenario, cfg.n_per_rep, np.random.default_rng(_stream(cfg.seed, rep, 0)))


def _cv_seed(cfg: SimConfig, rep: int) -> int:
    return int(np.random.default_rng(_stream(cfg.seed, rep, 1)).integers(0, 2**63 - 1))


def _balance_stats(sim: SimData, w) -> dict:
    cols = {"X1": sim.X1, "X2": sim.X2, "X3": sim.X3}
    out = {"ks_A": balance.weighted_ks(sim.A, w)}
    for name, x in cols.items():
        out[f"slope_{name}"] = abs(balance.conditional_slope(x, sim.A, w)[0])
        out[f"cor_{name}"] = abs(balance.weighted_correlation(x, sim.A, w))
        out[f"ks_{name}"] = balance.weighted_ks(x, w)
    return out


def _one_rep(args):
    cfg, rep = args
    sim = rep_data(cfg, rep)
    dm = sim.design()
    grid = cfg.grid
    cv_seed = _cv_seed(cfg, rep)
    res = {}
    for method in cfg.methods:
        pcfg = PipelineConfig(method, span_grid=cfg.span_grid, folds=cfg.folds, cv_seed=cv_seed, extrapolate=True)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                wr = compute_weights(dm, sim.A, pcfg)
                curve = fit_curve(sim.A, sim.Y, wr.weights, grid, pcfg)
                reg = drc.global_poly_fit(sim.A, sim.Y, wr.weights, cfg.reg_degree, grid)
        except (ValueError, np.linalg.LinAlgError) as exc:
            res[method] = {"error": str(exc)}
            continue
        res[method] = {
            "loess": curve.estimates,
            "reg": reg.values,
            "span": curve.span_used,
            "ess": wr.ess,
            "converged": wr.converged,
            "balance": _balance_stats(sim, wr.weights),
        }
    return res


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (threads * 4))))


@dataclass
class MetricsTable:
    config: SimConfig
    grid: np.ndarray
    rows: dict  # method -> metrics
    balance_avg: dict
    balance_max: dict
    curves: dict = field(repr=False, default_factory=dict)  # (method, estimator) -> reps x grid

    def cell(self, method: str, key: str) -> float:
        return self.rows[method][key]

    def bundles(self) -> dict:
        """Mean and 2.5/97.5% envelopes of the estimated curves across reps."""
        out = {}
        for (method, est), arr in self.curves.items():
            out[(method, est)] = (
                np.nanmean(arr, axis=0),
                np.nanpercentile(arr, 2.5, axis=0),
                np.nanpercentile(arr, 97.5, axis=0),
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = ["ess", "loess_bias", "reg_bias", "loess_mse", "reg_mse", "mean_span", "n_ok", "n_failed", "n_nonconverged"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", *keys])
        for method, row in self.rows.items():
            writer.writerow([method, *[repr(float(row[k])) for k in keys]])
        return buf.getvalue()

    def bundles_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "estimator", "a0", "truth", "mean", "q025", "q975"])
        truth = true_curve_main(self.grid) if self.config.scenario == "main" else true_curve_noeffect(self.grid)
        for (method, est), (mean, lo, hi) in self.bundles().items():
            for i, a0 in enumerate(self.grid):
                writer.writerow([method, est, repr(float(a0)), repr(float(truth[i])), repr(float(mean[i])), repr(float(lo[i])), repr(float(hi[i]))])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'Weighting Method':<28}{'Avg. ESS':>10}{'Bias LOESS':>12}{'Bias Reg.':>11}{'MSE LOESS':>11}{'MSE Reg.':>10}"
        lines = [f"scenario={self.config.scenario} reps={self.config.reps} n={self.config.n_per_rep}", head, "-" * len(head)]
        for method, row in self.rows.items():
            lines.append(
                f"{PAPER_LABELS.get(method, method):<28}{row['ess']:>10.3f}{row['loess_bias']:>12.3f}"
                f"{row['reg_bias']:>11.3f}{row['loess_mse']:>11.3f}{row['reg_mse']:>10.3f}"
            )
        for label in EXTERNAL_ROWS:
            lines.append(f"{label:<28}  external method - not implemented")
        return "\n".join(lines)

    def balance_table(self) -> str:
        cols = ["slope_X1", "slope_X2", "slope_X3", "cor_X1", "cor_X2", "cor_X3", "ks_A", "ks_X1", "ks_X2", "ks_X3"]
        head = f"{'Method':<28}" + "".join(f"{c:>10}" for c in cols)
        lines = []
        for title, block in (("Average across replications", self.balance_avg), ("Maximum across replications", self.balance_max)):
            lines += [title, head, "-" * len(head)]
            for method, stats in block.items():
                lines.append(f"{PAPER_LABELS.get(method, method):<28}" + "".join(f"{stats[c]:>10.3f}" for c in cols))
            for label in EXTERNAL_ROWS:
                lines.append(f"{label:<28}  external method - not implemented")
        return "\n".join(lines)


def run_replications(cfg: SimConfig) -> MetricsTable:
    """Per-rep weights and curves for every method, aggregated over reps.

    Bias and MSE are averaged over the grid within a rep, then over reps.
    The global regression is quadratic for ``main`` and linear for
    ``no_effect``.
    """
    results = _map(_one_rep, [(cfg, r) for r in range(cfg.reps)], cfg.threads)
    grid = cfg.grid
    truth = true_curve_main(grid) if cfg.scenario == "main" else true_curve_noeffect(grid)
    rows, bal_avg, bal_max, curves = {}, {}, {}, {}
    for method in cfg.methods:
        ok = [r[method] for r in results if "error" not in r[method]]
        failed = len(results) - len(ok)
        row = {"n_ok": len(ok), "n_failed": failed}
        if not ok:
            rows[method] = {**row, **{k: math.nan for k in ("ess", "loess_bias", "reg_bias", "loess_mse", "reg_mse", "mean_span")}, "n_nonconverged": 0}
            continue
        for est in ("loess", "reg"):
            arr = np.array([r[est] for r in ok])
            curves[(method, est)] = arr
            err = arr - truth
            row[f"{est}_bias"] = float(np.mean(np.nanmean(err, axis=1)))
            row[f"{est}_mse"] = float(np.mean(np.nanmean(err**2, axis=1)))
        row["ess"] = float(np.mean([r["ess"] for r in ok]))
        row["mean_span"] = float(np.mean([r["span"] for r in ok]))
        row["n_nonconverged"] = sum(not r["converged"] for r in ok)
        rows[method] = row
        keys = ok[0]["balance"].keys()
        bal_avg[method] = {k: float(np.mean([r["balance"][k] for r in ok])) for k in keys}
        bal_max[method] = {k: float(np.max([r["balance"][k] for r in ok])) for k in keys}
    return MetricsTable(cfg, grid, rows, bal_avg, bal_max, curves)


@dataclass
class CoverageTable:
    grid: np.ndarray
    coverage: np.ndarray
    mean_se: np.ndarray
    sampling_sd: np.ndarray
    ratio: np.ndarray
    exposure_quantiles: dict  # probability -> average per-rep quantile of A
    reps: int
    B: int
    method: str
    n_failed_replicates: int

    def region(self, lo_prob: float = 0.05, hi_prob: float = 0.95) -> np.ndarray:
        return (self.grid >= self.exposure_quantiles[lo_prob]) & (self.grid <= self.exposure_quantiles[hi_prob])

    def to_csv(self) -> str:
        lines = ["a0,coverage,mean_bootstrap_se,sampling_sd,ratio"]
        for row in zip(self.grid, self.coverage, self.mean_se, self.sampling_sd, self.ratio):
            lines.append(",".join("" if math.isnan(v) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _coverage_rep(args):
    cfg, rep, B, method = args
    sim = rep_data(cfg, rep)
    pcfg = PipelineConfig(method, span_grid=cfg.span_grid, folds=cfg.folds, cv_seed=_cv_seed(cfg, rep), extrapolate=True)
    boot_seed = int(np.random.default_rng(_stream(cfg.seed, rep, 2)).integers(0, 2**63 - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = bootstrap_arrays(sim.design(), sim.A, sim.Y, pcfg, cfg.grid, B, boot_seed)
    quant = np.quantile(sim.A, [0.01, 0.05, 0.95, 0.99])
    return res.point_estimates, res.se, res.lo, res.hi, quant, res.n_failed


def coverage_study(cfg: SimConfig, B: int = 100, method: str = "eb_2") -> CoverageTable:
    """Pointwise coverage of the +/- 2 se bootstrap interval over simulated datasets."""
    out = _map(_coverage_rep, [(cfg, r, B, method) for r in range(cfg.reps)], cfg.threads)
    grid = cfg.grid
    truth = true_curve_main(grid) if cfg.scenario == "main" else true_curve_noeffect(grid)
    est = np.array([o[0] for o in out])
    se = np.array([o[1] for o in out])
    lo = np.array([o[2] for o in out])
    hi = np.array([o[3] for o in out])
    quant = np.mean([o[4] for o in out], axis=0)
    valid = ~np.isnan(lo) & ~np.isnan(hi)
    covered = (lo <= truth) & (truth <= hi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coverage = np.where(valid.sum(0) > 0, (covered & valid).sum(0) / valid.sum(0), np.nan)
        mean_se = np.nanmean(se, axis=0)
        sampling = np.nanstd(est, axis=0, ddof=1) if cfg.reps > 1 else np.full(grid.size, np.nan)
        ratio = mean_se / sampling
    return CoverageTable(
        grid,
        coverage,
        mean_se,
        sampling,
        ratio,
        dict(zip((0.01, 0.05, 0.95, 0.99), map(float, quant))),
        cfg.reps,
        B,
        method,
        int(sum(o[5] for o in out)),
    )
