"""Heterogeneous privacy-budget allocation.

Minimise sum_i Delta_i / eps_i subject to 0 < eps_i <= cap_i and either the
global budget sum_i eps_i <= n eps_bar or the neighbourhood budgets
(A eps)_i <= eps_bar. The neighbourhood form implies the global one for a
doubly-stochastic A since 1^T A eps = 1^T eps.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import NotConverged, NotConvergedWarning

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class BudgetProblem:
    sensitivities: np.ndarray
    average_budget: float
    caps: np.ndarray | None = None
    weights: np.ndarray | None = None  # dense doubly-stochastic A for the decentralized form

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.sensitivities, dtype=float))
        if d.ndim != 1 or d.size == 0:
            raise ValueError("sensitivities must be a nonempty vector")
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("sensitivities must be finite and positive")
        if not self.average_budget > 0:
            raise ValueError("average budget must be positive")
        caps = np.full(d.size, np.inf) if self.caps is None else np.broadcast_to(np.asarray(self.caps, dtype=float), d.shape).copy()
        if np.any(caps <= 0):
            raise ValueError("caps must be positive")
        object.__setattr__(self, "sensitivities", d)
        object.__setattr__(self, "caps", caps)
        if self.weights is not None:
            w = self.weights
            w = w.dense if hasattr(w, "dense") else np.asarray(w, dtype=float)
            if w.shape != (d.size, d.size):
                raise ValueError("weights must be n x n")
            if np.any(w < 0) or np.abs(w.sum(axis=0) - 1).max() > 1e-10 or np.abs(w.sum(axis=1) - 1).max() > 1e-10:
                raise ValueError("weights must be nonnegative and doubly stochastic")
            object.__setattr__(self, "weights", np.asarray(w, dtype=float))

    @property
    def n(self) -> int:
        return self.sensitivities.size

    @property
    def total(self) -> float:
        return self.n * self.average_budget

    def objective(self, eps) -> float:
        return float(np.sum(self.sensitivities / np.asarray(eps, dtype=float)))

    def homogeneous_objective(self) -> float:
        return float(self.sensitivities.sum() / self.average_budget)

    def residuals(self, eps) -> dict:
        eps = np.asarray(eps, dtype=float)
        res = {
            "global": float(eps.sum() - self.total),
            "cap": float(np.max(eps - self.caps)),
            "positivity": float(-eps.min()),
        }
        if self.weights is not None:
            res["neighbourhood"] = float(np.max(self.weights @ eps - self.average_budget))
        return res


@dataclass
class BudgetAllocation:
    epsilon: np.ndarray
    objective: float
    residuals: dict
    method: str
    converged: bool = True
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def saturated(self) -> np.ndarray:
        return self.extra.get("saturated", np.zeros(self.epsilon.size, dtype=bool))

    def feasible(self, tol: float = FEAS_TOL, neighbourhood: bool | None = None) -> bool:
        r = self.residuals
        keys = ["cap", "positivity"]
        if neighbourhood or (neighbourhood is None and "neighbourhood" in r and self.method == "decentralized"):
            keys.append("neighbourhood")
        else:
            keys.append("global")
        scale = max(1.0, float(np.max(np.abs(self.epsilon))))
        return all(r[k] <= tol * scale for k in keys if k in r)


def _package(problem: BudgetProblem, eps, method, **kw) -> BudgetAllocation:
    eps = np.asarray(eps, dtype=float)
    extra = kw.pop("extra", {})
    extra.setdefault("saturated", np.isclose(eps, problem.caps, rtol=1e-12, atol=0.0))
    return BudgetAllocation(eps, problem.objective(eps), problem.residuals(eps), method, extra=extra, **kw)


def water_fill(sqrt_d: np.ndarray, caps: np.ndarray, total: float) -> np.ndarray:
    """Exact minimiser of sum d_i / e_i on {sum e <= total, e <= caps}.

    Uncapped agents get e_i proportional to sqrt(d_i); agents whose share
    exceeds their cap are fixed at the cap and the remainder re-solved.
    """
    n = sqrt_d.size
    if caps.sum() <= total:
        return caps.copy()
    free = np.ones(n, dtype=bool)
    eps = np.empty(n)
    while True:
        budget = total - caps[~free].sum()
        share = budget * sqrt_d[free] / sqrt_d[free].sum()
        over = share > caps[free]
        if not over.any():
            eps[free] = share
            eps[~free] = caps[~free]
            return eps
        idx = np.flatnonzero(free)[over]
        free[idx] = False


def allocate_formula(problem: BudgetProblem) -> BudgetAllocation:
    """eps_i = min(cap_i, n eps_bar sqrt(Delta_i) / sum_j sqrt(Delta_j)), slack left unused."""
    r = np.sqrt(problem.sensitivities)
    if problem.caps.sum() < problem.total:
        eps = problem.caps.copy()
    else:
        eps = np.minimum(problem.caps, problem.total * r / r.sum())
    return _package(problem, eps, "formula")


def allocate_closed_form(problem: BudgetProblem) -> BudgetAllocation:
    """Water-filling optimum; the capped printed formula is evaluated alongside and its gap reported."""
    eps = water_fill(np.sqrt(problem.sensitivities), problem.caps, problem.total)
    formula = allocate_formula(problem)
    alloc = _package(problem, eps, "closed_form")
    alloc.extra["formula_epsilon"] = formula.epsilon
    alloc.extra["formula_objective"] = formula.objective
    alloc.extra["formula_gap"] = formula.objective - alloc.objective
    return alloc


def _project_capped_simplex(y, lo, hi, total):
    """Euclidean projection onto {lo <= x <= hi, sum x <= total} by bisection on the multiplier."""
    x = np.clip(y, lo, hi)
    if x.sum() <= total:
        return x
    a, b = 0.0, float(np.max(y - lo))
    for _ in range(200):
        m = 0.5 * (a + b)
        if np.clip(y - m, lo, hi).sum() > total:
            a = m
        else:
            b = m
        if b - a <= 1e-16 * max(1.0, b):
            break
    return np.clip(y - b, lo, hi)


def allocate_projected_gradient(problem: BudgetProblem, max_iters: int = 20000, tol: float = 1e-13) -> BudgetAllocation:
    """Reference solver for the global problem: accelerated projected gradient with backtracking."""
    d = problem.sensitivities / problem.sensitivities.mean()
    scale = problem.average_budget
    total = problem.n
    hi = np.minimum(problem.caps / scale, total)
    lo = 1e-9 * np.ones(problem.n)
    f = lambda x: float(np.sum(d / x))  # noqa: E731
    grad = lambda x: -d / np.square(x)  # noqa: E731
    x = _project_capped_simplex(np.minimum(np.ones(problem.n), hi), lo, hi, total)
    y, tk, L = x.copy(), 1.0, 1.0
    fx = f(x)
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        gy = grad(y)
        fy = f(y)
        while True:
            z = _project_capped_simplex(y - gy / L, lo, hi, total)
            diff = z - y
            if f(z) <= fy + gy @ diff + 0.5 * L * diff @ diff + 1e-15 * abs(fy):
                break
            L *= 2.0
        fz = f(z)
        if fz > fx:
            if tk == 1.0:  # no descent even without momentum: stationary up to rounding
                converged = True
                break
            y, tk = x.copy(), 1.0  # adaptive restart
            continue
        tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        y = z + ((tk - 1) / tn) * (z - x)
        done = abs(fx - fz) <= tol * max(1.0, abs(fz)) and np.max(np.abs(z - x)) <= 1e-10 * max(1.0, float(np.max(x)))
        x, fx, tk = z, fz, tn
        L *= 0.9
        if done:
            converged = True
            break
    return _package(problem, x * scale, "projected_gradient", converged=converged, iterations=it)


def allocate_neighbourhood_reference(problem: BudgetProblem) -> BudgetAllocation:
    """Centralised SLSQP solution of the neighbourhood-constrained problem (test oracle)."""
    if problem.weights is None:
        raise ValueError("neighbourhood problem needs weights")
    A = problem.weights
    d = problem.sensitivities / problem.sensitivities.mean()
    hi = np.minimum(problem.caps / problem.average_budget, problem.n)
    x0 = np.minimum(0.5 * np.ones(problem.n), hi)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = _slsqp(A, d, hi, x0)
    x = res.x
    worst = float(np.max(A @ x))
    if worst > 1:
        x = x / worst
    return _package(problem, x * problem.average_budget, "neighbourhood_reference", converged=bool(res.success), iterations=res.nit)


def _slsqp(A, d, hi, x0):
    return optimize.minimize(
        lambda x: float(np.sum(d / x)),
        x0,
        jac=lambda x: -d / np.square(x),
        bounds=list(zip(np.full(d.size, 1e-9), hi)),
        constraints=[{"type": "ineq", "fun": lambda x: 1.0 - A @ x, "jac": lambda x: -A}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 2000},
    )


def allocate_decentralized(
    problem: BudgetProblem,
    step_size: float = 1.0,
    max_iters: int = 20000,
    tol: float = 1e-6,
    strict: bool = False,
) -> BudgetAllocation:
    """Neighbourhood-constrained allocation by accelerated dual ascent.

    With one multiplier lam_i per neighbourhood constraint, the Lagrangian
    separates over agents and each agent's minimiser is explicit:
    eps_i = clip(sqrt(Delta_i / w_i), 0, cap_i) with w = A^T lam, a sum over
    the agent's neighbours. The multipliers take projected gradient steps
    along the local residual (A eps)_i - eps_bar with Nesterov momentum and
    backtracking (``step_size`` is the initial step). The returned point is
    made feasible by eps <- eps * min(1, eps_bar / max_i (A eps)_i).

    Iteration stops once the relative duality gap between that feasible
    point and the dual bound is below ``tol``. Without convergence the last
    feasible iterate is returned flagged, or :class:`NotConverged` is raised
    when ``strict``.
    """
    if step_size <= 0:
        raise ValueError("step size must be positive")
    if problem.weights is None:
        raise ValueError("decentralized allocation needs neighbourhood weights")
    A = problem.weights
    n = problem.n
    d = problem.sensitivities / problem.sensitivities.mean()
    hi = np.minimum(problem.caps / problem.average_budget, n)  # column stochasticity bounds each eps_i by n eps_bar
    lo = 1e-12

    def primal(lam):
        w = A.T @ lam
        x = np.where(w > 0, np.sqrt(d / np.maximum(w, 1e-300)), hi)
        return np.clip(x, lo, hi), w

    def dual(lam):
        x, w = primal(lam)
        return float(np.sum(d / x) + w @ x - lam.sum()), A @ x - 1.0, x

    lam = np.full(n, math.sqrt(d.mean()))
    y, tk, L = lam.copy(), 1.0, 1.0 / step_size
    q_lam, _, x = dual(lam)
    best_x, best_f, gap = None, math.inf, math.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        qy, gy, _ = dual(y)
        while True:
            z = np.maximum(0.0, y + gy / L)
            qz, gz, xz = dual(z)
            diff = z - y
            if qz >= qy + gy @ diff - 0.5 * L * (diff @ diff) - 1e-14 * abs(qy):
                break
            L *= 2.0
        if qz < q_lam:  # adaptive restart keeps the ascent monotone
            y, tk = lam.copy(), 1.0
            continue
        tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        y = z + ((tk - 1) / tn) * (z - lam)
        lam, q_lam, tk = z, qz, tn
        L *= 0.95
        feas = xz / max(1.0, float(np.max(A @ xz)))
        f = float(np.sum(d / feas))
        if f < best_f:
            best_x, best_f = feas, f
        gap = (best_f - q_lam) / best_f
        if gap <= tol:
            converged = True
            break
    alloc = _package(problem, best_x * problem.average_budget, "decentralized", converged=converged, iterations=it,
                     extra={"multipliers": lam, "duality_gap": gap})
    if not converged:
        if strict:
            raise NotConverged(max_iters, alloc)
        warnings.warn(f"decentralized allocation stopped after {max_iters} iterations (gap {gap:.2e})",
                      NotConvergedWarning, stacklevel=2)
    return alloc


def improvement_ratio(allocation: BudgetAllocation, problem: BudgetProblem) -> float:
    """Heterogeneous objective over the homogeneous one, sum(D/eps*) / sum(D/eps_bar)."""
    hom = problem.homogeneous_objective()
    if not (math.isfinite(allocation.objective) and math.isfinite(hom)):
        raise ValueError("objectives must be finite")
    return allocation.objective / hom


def ratio_bracket(problem: BudgetProblem) -> tuple[float, float]:
    d = problem.sensitivities
    return float(d.min() / d.max()), 1.0


def allocation_to_csv(allocation: BudgetAllocation, problem: BudgetProblem, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "delta", "epsilon", "cap", "saturated"])
        sat = allocation.saturated
        for i in range(problem.n):
            cap = problem.caps[i]
            w.writerow([i, repr(float(problem.sensitivities[i])), repr(float(allocation.epsilon[i])),
                        "inf" if math.isinf(cap) else repr(float(cap)), bool(sat[i])])
