"""Weighted balance diagnostics for a continuous exposure.

For each encoded covariate the report carries marginal statistics (mean, sd,
KS distance of the weighted from the unweighted distribution), the Pearson
correlation with the exposure and the slope of the exposure regressed on the
covariate, each with and without weights.

Variances use population moments, ``sum w (x - xbar_w)^2`` with normalized
weights, which is also what the moment constraints preserve.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .dataset import DesignMatrix


def _normalized(w, n: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if n is not None and w.shape != (n,):
        raise ValueError("weights length differs from data length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights sum to zero")
    return w / total


def effective_sample_size(w) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(w, dtype=float)
    sq = np.sum(w**2)
    if not sq > 0:
        raise ValueError("effective sample size is undefined for all-zero weights")
    return float(w.sum() ** 2 / sq)


def weighted_mean(x, w) -> float:
    w = _normalized(w, len(x))
    return float(w @ np.asarray(x, dtype=float))


def weighted_var(x, w) -> float:
    x = np.asarray(x, dtype=float)
    w = _normalized(w, x.size)
    m = w @ x
    return float(w @ (x - m) ** 2)


def _wcov(x, a, w):
    mx, ma = w @ x, w @ a
    dx, da = x - mx, a - ma
    return w @ (dx * da), w @ (dx * dx), w @ (da * da)


def weighted_correlation(x, a, w) -> float:
    """Weighted Pearson correlation; ``nan`` when either weighted variance is zero."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    w = _normalized(w, x.size)
    cxa, vx, va = _wcov(x, a, w)
    if vx <= 0 or va <= 0:
        return float("nan")
    r = cxa / math.sqrt(vx * va)
    return float(min(1.0, max(-1.0, r)))


def conditional_slope(x, a, w) -> tuple[float, float, float]:
    """Weighted least squares slope of ``a`` on ``x`` with intercept.

    Returns ``(beta, t, p)``.  The standard error is the usual WLS one,
    ``sqrt(sum w r^2 / (N - 2) / sum w (x - xbar_w)^2)`` with weights scaled
    to mean one, and the p-value uses a normal reference.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    n = x.size
    w = _normalized(w, n)
    cxa, vx, va = _wcov(x, a, w)
    if vx <= 0 or va <= 0:
        return float("nan"), float("nan"), float("nan")
    beta = cxa / vx
    if n <= 2:
        return float(beta), float("nan"), float("nan")
    resid = (a - w @ a) - beta * (x - w @ x)
    wn = w * n
    sigma2 = (wn @ resid**2) / (n - 2)
    se = math.sqrt(sigma2 / (n * vx))
    if se == 0:
        t = 0.0 if beta == 0 else math.copysign(math.inf, beta)
    else:
        t = beta / se
    p = float(2 * stats.norm.sf(abs(t)))
    return float(beta), float(t), p


def weighted_ks(x, w) -> float:
    """Largest gap between the weighted and the equal-weight ECDF of ``x``.

    Both are step functions jumping at the sample points, so the supremum is
    taken over the distinct sample values.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    w = _normalized(w, n)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    fw = np.cumsum(w[order])
    fu = np.arange(1, n + 1) / n
    last = np.r_[xs[1:] != xs[:-1], True]  # evaluate after all ties at a value
    gap = np.abs(fw[last] - fu[last]).max()
    return float(min(1.0, gap))


def weighted_quantile(x, w, probs) -> np.ndarray:
    """Left-continuous inverse of the weighted ECDF."""
    x = np.asarray(x, dtype=float)
    w = _normalized(w, x.size)
    order = np.argsort(x, kind="stable")
    cdf = np.cumsum(w[order])
    idx = np.searchsorted(cdf, np.asarray(probs, dtype=float) - 1e-12, side="left")
    return x[order][np.minimum(idx, x.size - 1)]


def ecdf_points(x, w) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and the weighted ECDF at each, for plotting."""
    x = np.asarray(x, dtype=float)
    w = _normalized(w, x.size)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cdf = np.cumsum(w[order])
    last = np.r_[xs[1:] != xs[:-1], True]
    return xs[last], np.minimum(cdf[last], 1.0)


@dataclass
class Summary:
    mean: float
    sd: float
    cor: float | None = None
    beta: float | None = None
    t: float | None = None
    p: float | None = None


@dataclass
class CovariateBalance:
    name: str
    source: str
    unweighted: Summary
    weighted: Summary
    ks: float


@dataclass
class BalanceReport:
    exposure_name: str
    exposure_unweighted: Summary
    exposure_weighted: Summary
    exposure_ks: float
    covariates: list[CovariateBalance]
    ess: float
    n: int
    slope_scale: str = "raw covariate units"

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "BalanceReport":
        def summ(s):
            return Summary(**{k: (float("nan") if v is None and k in ("mean", "sd") else v) for k, v in s.items()})

        covs = [
            CovariateBalance(c["name"], c["source"], summ(c["unweighted"]), summ(c["weighted"]), _nan(c["ks"]))
            for c in d["covariates"]
        ]
        return cls(
            d["exposure_name"],
            summ(d["exposure_unweighted"]),
            summ(d["exposure_weighted"]),
            _nan(d["exposure_ks"]),
            covs,
            d["ess"],
            d["n"],
            d.get("slope_scale", "raw covariate units"),
        )

    def max_abs_weighted_correlation(self) -> float:
        vals = [abs(c.weighted.cor) for c in self.covariates if c.weighted.cor is not None and not math.isnan(c.weighted.cor)]
        return max(vals) if vals else float("nan")

    def rows(self) -> list[dict]:
        """One flat record per variable (exposure first), for CSV output."""
        out = []

        def flat(name, source, u, w, ks):
            rec = {"variable": name, "source": source}
            for prefix, s in (("unweighted", u), ("weighted", w)):
                for key in ("mean", "sd", "cor", "beta", "t", "p"):
                    rec[f"{prefix}_{key}"] = getattr(s, key)
            rec["ks"] = ks
            return rec

        out.append(flat(self.exposure_name, self.exposure_name, self.exposure_unweighted, self.exposure_weighted, self.exposure_ks))
        for c in self.covariates:
            out.append(flat(c.name, c.source, c.unweighted, c.weighted, c.ks))
        return out

    def to_csv(self) -> str:
        import csv

        buf = io.StringIO()
        rows = self.rows()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned text table: unweighted block, weighted block, KS."""
        head = ["Variable", "Mean", "SD", "Cor.", "beta", "t", "p", "Mean", "SD", "Cor.", "beta", "t", "p", "KS"]

        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, float) and math.isnan(v):
                return "NA"
            return f"{v:.2f}"

        lines = []
        for r in self.rows():
            cells = [r["variable"]]
            for prefix in ("unweighted", "weighted"):
                cells += [fmt(r[f"{prefix}_{k}"]) for k in ("mean", "sd", "cor", "beta", "t", "p")]
            cells.append(fmt(r["ks"]))
            lines.append(cells)
        widths = [max(len(str(row[i])) for row in [head, *lines]) for i in range(len(head))]
        def join(cells):
            return "  ".join(str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(cells))
        title = " " * widths[0] + "  " + "Unweighted".center(sum(widths[1:7]) + 10) + "  " + "Weighted".center(sum(widths[7:13]) + 10)
        out = [title, join(head), "-" * len(join(head))]
        out += [join(c) for c in lines]
        out.append("-" * len(join(head)))
        out.append(f"Effective sample size: unweighted {self.n}, weighted {self.ess:.2f}")
        out.append(f"(beta: slope of exposure on covariate, {self.slope_scale})")
        return "\n".join(out)


def _nan(v):
    return float("nan") if v is None else v


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _summaries(x, a, w, with_association=True) -> Summary:
    mean = weighted_mean(x, w)
    sd = math.sqrt(weighted_var(x, w))
    if not with_association:
        return Summary(mean, sd)
    cor = weighted_correlation(x, a, w)
    beta, t, p = conditional_slope(x, a, w)
    return Summary(mean, sd, cor, beta, t, p)


def balance_report(dm: DesignMatrix, exposure, w, exposure_name: str = "exposure") -> BalanceReport:
    """Weighted and unweighted diagnostics for every encoded covariate."""
    a = np.asarray(exposure, dtype=float)
    n = a.size
    if dm.n != n:
        raise ValueError("design rows differ from exposure length")
    w = _normalized(w, n)
    u = np.full(n, 1.0 / n)
    raw = dm.raw_columns()
    covs = []
    for j in range(dm.m):
        x = raw[:, j]
        covs.append(
            CovariateBalance(
                dm.names[j], dm.source_map[j], _summaries(x, a, u), _summaries(x, a, w), weighted_ks(x, w)
            )
        )
    return BalanceReport(
        exposure_name,
        _summaries(a, a, u, with_association=False),
        _summaries(a, a, w, with_association=False),
        weighted_ks(a, w),
        covs,
        effective_sample_size(w),
        n,
    )
