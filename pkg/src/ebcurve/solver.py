"""Entropy-balancing weights for a continuous exposure.

Every constraint is written as ``sum_i w_i c_ik = 0`` for a constraint matrix
``C`` (one column per constraint).  Minimizing the KL divergence of ``w`` from
base weights ``q`` under these constraints and ``sum w = 1`` has the dual

    F(theta) = log sum_i q_i exp(-c_i . theta)

whose minimizer gives the weights in closed form as a softmax of
``-C theta``.  The dual is solved with L-BFGS-B inside a box on the
multipliers, then polished with projected Newton steps (the Hessian is the
weighted covariance of ``C`` and only K x K).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .dataset import DesignMatrix, MomentTargets, moment_targets

DEFAULT_BOUNDS = (-100.0, 100.0)
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
LBFGS_MEMORY = 10
_BOUND_EPS = 1e-8
_CONSTANT_RTOL = 1e-10


class BoundHitWarning(UserWarning):
    """Some dual multipliers ended on the box; balance may be imperfect."""


class InfeasibilityWarning(UserWarning):
    pass


class Label(NamedTuple):
    family: str  # "covariance", "exposure" or "covariate"
    name: str
    power: int
    exposure_power: int = 1

    def __str__(self):
        if self.family == "covariance":
            a = "a" if self.exposure_power == 1 else f"a^{self.exposure_power}"
            return f"cov({self.name}^{self.power},{a})"
        return f"{self.name}^{self.power}"


@dataclass(frozen=True)
class ConstraintSystem:
    columns: np.ndarray
    labels: tuple[Label, ...]
    dropped: tuple[Label, ...] = ()

    def __post_init__(self):
        cols = np.array(self.columns, dtype=float)
        if cols.ndim != 2 or cols.shape[1] != len(self.labels):
            raise ValueError("constraint matrix must be N x K with one label per column")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    def take(self, idx) -> "ConstraintSystem":
        return ConstraintSystem(self.columns[np.asarray(idx)], self.labels, self.dropped)


@dataclass(frozen=True)
class DualParams:
    """Multipliers on the original constraint scale.

    The box ``bounds`` applies to ``theta * scale`` (the multipliers of the
    unit-sd constraint columns the optimizer works with).
    """

    theta: np.ndarray
    bounds: tuple[float, float] = DEFAULT_BOUNDS
    scale: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError("lower bound must be below upper bound")
        theta = np.array(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if self.scale is None:
            object.__setattr__(self, "scale", np.ones_like(theta))

    @property
    def scaled(self) -> np.ndarray:
        return self.theta * self.scale


@dataclass(frozen=True)
class EBSolution:
    weights: np.ndarray
    base_weights: np.ndarray
    theta: DualParams
    dual_value: float
    constraint_residuals: np.ndarray
    converged: bool
    at_bound: np.ndarray
    ess: float
    labels: tuple[Label, ...] = ()
    n_iter: int = 0
    projected_gradient: float = np.nan
    message: str = ""
    dropped: tuple[Label, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "message": self.message,
            "n_iter": int(self.n_iter),
            "ess": float(self.ess),
            "n": int(self.weights.size),
            "dual_value": float(self.dual_value),
            "projected_gradient": float(self.projected_gradient),
            "bounds": list(self.theta.bounds),
            "constraints": [
                {
                    "label": str(lab),
                    "theta": float(t),
                    "residual": float(r),
                    "at_bound": bool(b),
                }
                for lab, t, r, b in zip(self.labels, self.theta.theta, self.constraint_residuals, self.at_bound)
            ],
            "dropped_constraints": [str(lab) for lab in self.dropped],
        }


def build_constraints(
    dm: DesignMatrix,
    exposure,
    targets: MomentTargets,
    P: int | None = None,
    Q: int | None = None,
    cross_powers: bool = False,
) -> ConstraintSystem:
    """Assemble covariance, exposure-marginal and covariate-marginal columns.

    Covariance columns are ``(X_j^p - mu_j^p)(A - mu_A)``.  With
    ``cross_powers`` the exposure side also runs over ``A^q - mu_A^q`` for
    q = 1..Q.  Numerically constant columns are dropped with a warning.
    """
    P = targets.P if P is None else P
    Q = targets.Q if Q is None else Q
    if (P, Q) != (targets.P, targets.Q):
        raise ValueError(f"targets were computed for P={targets.P}, Q={targets.Q}")
    a = np.asarray(exposure, dtype=float)
    if a.shape != (dm.n,):
        raise ValueError("exposure length differs from design rows")

    x_centered = []  # (label name, p, X^p - mu)
    for j in range(dm.m):
        x = dm.columns[:, j]
        for p, mu in enumerate(targets.covariate_targets[j], start=1):
            x_centered.append((dm.names[j], p, x**p - mu))
    a_centered = [a**q - mu for q, mu in enumerate(targets.exposure_targets, start=1)]

    cols, labels = [], []
    exposure_sides = range(1, Q + 1) if cross_powers else (1,)
    for name, p, xc in x_centered:
        for q in exposure_sides:
            cols.append(xc * a_centered[q - 1])
            labels.append(Label("covariance", name, p, q))
    for q, ac in enumerate(a_centered, start=1):
        cols.append(ac)
        labels.append(Label("exposure", "a", q))
    for name, p, xc in x_centered:
        cols.append(xc)
        labels.append(Label("covariate", name, p))

    keep, dropped = [], []
    for col, lab in zip(cols, labels):
        spread = col.std()
        if spread <= _CONSTANT_RTOL * max(1.0, np.abs(col).max()):
            dropped.append(lab)
        else:
            keep.append((col, lab))
    if dropped:
        warnings.warn(
            "dropped constant constraint columns: " + ", ".join(str(d) for d in dropped), RuntimeWarning, stacklevel=2
        )
    if keep:
        mat = np.column_stack([c for c, _ in keep])
    else:
        mat = np.empty((dm.n, 0))
    return ConstraintSystem(mat, tuple(lab for _, lab in keep), tuple(dropped))


def _theta_vector(theta) -> np.ndarray:
    if isinstance(theta, DualParams):
        return theta.theta
    return np.atleast_1d(np.asarray(theta, dtype=float))


def _base(q, n: int) -> np.ndarray:
    if q is None:
        return np.full(n, 1.0 / n)
    q = np.asarray(q, dtype=float)
    if q.shape != (n,) or np.any(q < 0) or not q.sum() > 0:
        raise ValueError("base weights must be a nonnegative length-N vector with positive sum")
    return q / q.sum()


def _columns(cs) -> np.ndarray:
    return cs.columns if isinstance(cs, ConstraintSystem) else np.asarray(cs, dtype=float)


def dual_objective(theta, cs: ConstraintSystem, q=None) -> float:
    """``log sum_i q_i exp(-c_i . theta)`` evaluated stably."""
    c = _columns(cs)
    q = _base(q, c.shape[0])
    return float(logsumexp(-c @ _theta_vector(theta), b=q))


def weights_from_theta(theta, cs: ConstraintSystem, q=None) -> np.ndarray:
    c = _columns(cs)
    q = _base(q, c.shape[0])
    z = -c @ _theta_vector(theta)
    z -= z[q > 0].max()
    w = q * np.exp(z)
    return w / w.sum()


def dual_gradient(theta, cs: ConstraintSystem, q=None) -> np.ndarray:
    """Gradient of :func:`dual_objective`: ``-sum_i w_i(theta) c_i``."""
    c = _columns(cs)
    return -(weights_from_theta(theta, c, q) @ c)


def _value_grad(theta_s, c_s, q):
    z = -c_s @ theta_s
    zmax = z.max()
    e = q * np.exp(z - zmax)
    total = e.sum()
    w = e / total
    return zmax + np.log(total), -(w @ c_s), w


def _projected(theta_s, grad_s, lo, hi):
    pg = grad_s.copy()
    pg[(theta_s <= lo + _BOUND_EPS) & (grad_s > 0)] = 0.0
    pg[(theta_s >= hi - _BOUND_EPS) & (grad_s < 0)] = 0.0
    return pg


def _newton_polish(theta_s, c_s, q, scale, lo, hi, tol, max_steps):
    """Projected Newton on the free coordinates; returns (theta, steps)."""
    f, g, w = _value_grad(theta_s, c_s, q)
    steps = 0
    while steps < max_steps:
        pg = _projected(theta_s, g, lo, hi)
        if np.max(np.abs(pg * scale)) <= tol:
            break
        free = pg != 0
        cf = c_s[:, free]
        mean = w @ cf
        hess = (cf * w[:, None]).T @ cf - np.outer(mean, mean)
        try:
            step = np.linalg.solve(hess + 1e-14 * np.eye(hess.shape[0]), -g[free])
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -g[free], rcond=None)[0]
        old = np.max(np.abs(pg * scale))
        t = 1.0
        for _ in range(40):
            cand = theta_s.copy()
            cand[free] = np.clip(theta_s[free] + t * step, lo, hi)
            f_new, g_new, w_new = _value_grad(cand, c_s, q)
            pg_new = np.max(np.abs(_projected(cand, g_new, lo, hi) * scale))
            if np.isfinite(f_new) and (f_new < f - 1e-4 * t * abs(g[free] @ step) or (f_new <= f and pg_new < old)):
                break
            t *= 0.5
        else:
            break
        theta_s, f, g, w = cand, f_new, g_new, w_new
        steps += 1
    return theta_s, steps


def solve(
    cs: ConstraintSystem,
    q=None,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EBSolution:
    """Minimize the entropy-balancing dual inside a box.

    Columns are rescaled to unit standard deviation before optimizing and
    ``bounds`` applies to the rescaled multipliers.  ``converged`` means the
    projected gradient, measured on the original constraint scale (i.e. the
    weighted constraint sums of the free coordinates), is at most ``tol``.
    Solutions that end on the box are returned with a warning rather than
    raising, so that their balance can still be inspected.
    """
    c = _columns(cs)
    labels = cs.labels if isinstance(cs, ConstraintSystem) else tuple(Label("column", str(k), 1) for k in range(c.shape[1]))
    dropped = cs.dropped if isinstance(cs, ConstraintSystem) else ()
    n, k = c.shape
    if k == 0:
        raise ValueError("no usable constraints: every constraint column is constant")
    lo, hi = map(float, bounds)
    if not lo < hi:
        raise ValueError("lower bound must be below upper bound")
    q = _base(q, n)
    scale = c.std(axis=0)
    if np.any(scale == 0):
        raise ValueError("constant constraint column passed to solve")
    c_s = c / scale

    def fun(theta_s):
        f, g, _ = _value_grad(theta_s, c_s, q)
        return f, g

    x0 = np.clip(np.zeros(k), lo, hi)
    res = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(lo, hi)] * k,
        options={"maxcor": LBFGS_MEMORY, "maxiter": max_iter, "gtol": tol, "ftol": 1e-15},
    )
    theta_s = np.clip(res.x, lo, hi)
    n_iter = int(res.nit)
    theta_s, newton_steps = _newton_polish(theta_s, c_s, q, scale, lo, hi, tol, max(0, max_iter - n_iter))
    n_iter += newton_steps

    f, g, w = _value_grad(theta_s, c_s, q)
    pg = np.max(np.abs(_projected(theta_s, g, lo, hi) * scale))
    converged = bool(pg <= tol)
    at_bound = (theta_s <= lo + _BOUND_EPS) | (theta_s >= hi - _BOUND_EPS)
    residuals = np.abs(w @ c)
    if at_bound.any():
        names = ", ".join(str(lab) for lab, b in zip(labels, at_bound) if b)
        warnings.warn(f"dual multipliers at the box boundary for: {names}", BoundHitWarning, stacklevel=2)
    if converged:
        message = "converged"
    elif n_iter >= max_iter:
        message = "iteration limit reached"
    else:
        message = f"stopped: {res.message}"
    return EBSolution(
        weights=w,
        base_weights=q,
        theta=DualParams(theta_s / scale, (lo, hi), scale),
        dual_value=float(f),
        constraint_residuals=residuals,
        converged=converged,
        at_bound=at_bound,
        ess=float(1.0 / np.sum(w**2)),
        labels=labels,
        n_iter=n_iter,
        projected_gradient=float(pg),
        message=message,
        dropped=dropped,
    )


def entropy_balance(
    dm: DesignMatrix,
    exposure,
    moments: int = 2,
    exposure_moments: int | None = None,
    standardize: bool = True,
    cross_powers: bool = False,
    **solve_kwargs,
) -> EBSolution:
    """Weights balancing ``moments`` covariate moments and ``exposure_moments`` exposure moments.

    With ``standardize`` the continuous covariates and the exposure are put on
    unit scale before powers are taken.  The constrained span, and hence the
    weights, are the same as on the raw scale.
    """
    q_order = moments if exposure_moments is None else exposure_moments
    a = np.asarray(exposure, dtype=float)
    if standardize:
        dm = dm.standardized()
        sd = a.std()
        a = (a - a.mean()) / (sd if sd > 0 else 1.0)
    targets = moment_targets(dm, a, moments, q_order)
    cs = build_constraints(dm, a, targets, cross_powers=cross_powers)
    return solve(cs, **solve_kwargs)


@dataclass(frozen=True)
class BinarySolution:
    """Per-group entropy-balancing weights for a two-level exposure."""

    groups: dict
    index: dict
    n: int

    def full_weights(self) -> np.ndarray:
        """Length-N vector; weights sum to one within each group."""
        out = np.zeros(self.n)
        for g, sol in self.groups.items():
            out[self.index[g]] = sol.weights
        return out

    def tau_hat(self, outcome, treated=1, control=0) -> float:
        """Weighted difference of group means of ``outcome``."""
        y = np.asarray(outcome, dtype=float)
        t = self.groups[treated].weights @ y[self.index[treated]]
        c = self.groups[control].weights @ y[self.index[control]]
        return float(t - c)


def solve_binary(
    dm: DesignMatrix,
    group,
    targets: MomentTargets | None = None,
    P: int = 1,
    **solve_kwargs,
) -> BinarySolution:
    """Reweight each exposure group so its covariate moments hit ``targets``.

    Targets default to the pooled-sample moments (the whole population).
    """
    g = np.asarray(group)
    if g.shape != (dm.n,):
        raise ValueError("group vector length differs from design rows")
    levels = list(np.unique(g))
    if len(levels) != 2:
        raise ValueError(f"binary mode needs exactly two groups, found {len(levels)}")
    if targets is None:
        targets = moment_targets(dm, np.zeros(dm.n), P, 1)
    groups, index = {}, {}
    for level in levels:
        idx = np.flatnonzero(g == level)
        cols, labels = [], []
        for j in range(dm.m):
            x = dm.columns[idx, j]
            for p, mu in enumerate(targets.covariate_targets[j], start=1):
                cols.append(x**p - mu)
                labels.append(Label("covariate", dm.names[j], p))
        mat = np.column_stack(cols)
        if idx.size <= mat.shape[1]:
            warnings.warn(
                f"group {level!r} has {idx.size} members for {mat.shape[1]} constraints; balance may be infeasible",
                InfeasibilityWarning,
                stacklevel=2,
            )
        keep = mat.std(axis=0) > _CONSTANT_RTOL * np.maximum(1.0, np.abs(mat).max(axis=0))
        dropped = tuple(lab for lab, k in zip(labels, keep) if not k)
        # a constant column with nonzero mean cannot be balanced; leave it to the residuals
        cs = ConstraintSystem(mat[:, keep], tuple(lab for lab, k in zip(labels, keep) if k), dropped)
        if cs.k == 0:
            w = np.full(idx.size, 1.0 / idx.size)
            sol = EBSolution(w, w, DualParams(np.zeros(0)), 0.0, np.zeros(0), True, np.zeros(0, bool), float(idx.size))
        else:
            sol = solve(cs, **solve_kwargs)
        key = level.item() if hasattr(level, "item") else level
        groups[key] = sol
        index[key] = idx
    return BinarySolution(groups, index, dm.n)
