"""Scalar exponential-family signal models and their sensitivities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import EmptyInput, OutOfSupport, UnboundedSensitivity

UNBOUNDED = math.inf


def is_unbounded(value: float) -> bool:
    return math.isinf(value)


def smoothing_parameter(eps: float, delta: float) -> float:
    """gamma = eps / (2 log(2 / delta))."""
    return eps / (2.0 * math.log(2.0 / delta))


@dataclass(frozen=True)
class SignalModel:
    """One-parameter exponential family described by its sufficient statistic.

    Only what the estimators need is modelled: the statistic and its
    derivative, a sampler, the mean and variance of the statistic, and the
    support interval ``[lower, upper]`` (``lower_open`` marks ``(lower, ...``).
    """

    family: str
    statistic: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    mean_stat: float
    var_stat: float
    lower: float = -math.inf
    upper: float = math.inf
    lower_open: bool = False
    params: tuple = ()
    sensitivity: float | None = None
    smooth: Callable[[np.ndarray, float, float], np.ndarray] | None = None

    def in_support(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        lo_ok = s > self.lower if self.lower_open else s >= self.lower
        return lo_ok & (s <= self.upper)

    def xi(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not np.all(self.in_support(s)):
            bad = s[~self.in_support(s)].ravel()[0]
            raise OutOfSupport(f"signal {bad!r} outside the support of {self.family}")
        return self.statistic(s)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sampler(rng, size)


def gaussian_known_var(mu: float, sigma: float) -> SignalModel:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return SignalModel(
        family="gaussian",
        statistic=lambda s: s,
        derivative=lambda s: np.ones_like(s),
        sampler=lambda rng, k: mu + sigma * rng.standard_normal(k),
        mean_stat=float(mu),
        var_stat=float(sigma) ** 2,
        params=(mu, sigma),
        sensitivity=1.0,
    )


def _log_smooth(s, eps, delta):
    s = np.asarray(s, dtype=float)
    return 2.0 * math.log(2.0 / delta) / (math.e * eps * s)


def lognormal_known_var(mu: float, sigma: float, s_min: float = 0.0) -> SignalModel:
    """Log-normal signals with statistic log s.

    ``s_min`` is an optional support floor. With the default 0 the global
    sensitivity of log is unbounded and the smooth-sensitivity path is used;
    a positive floor gives the finite global sensitivity 1 / s_min.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if s_min < 0:
        raise ValueError("s_min must be nonnegative")
    if s_min > 0:
        def sampler(rng, k):
            return np.maximum(np.exp(mu + sigma * rng.standard_normal(k)), s_min)
    else:
        def sampler(rng, k):
            return np.exp(mu + sigma * rng.standard_normal(k))
    return SignalModel(
        family="lognormal",
        statistic=np.log,
        derivative=lambda s: 1.0 / s,
        sampler=sampler,
        mean_stat=float(mu),
        var_stat=float(sigma) ** 2,
        lower=float(s_min),
        lower_open=s_min == 0,
        params=(mu, sigma, s_min),
        sensitivity=(1.0 / s_min) if s_min > 0 else UNBOUNDED,
        smooth=_log_smooth,
    )


def custom(
    statistic: Callable,
    derivative: Callable,
    sampler: Callable,
    mean_stat: float,
    var_stat: float,
    support: tuple[float, float] = (-math.inf, math.inf),
    sensitivity: float | None = None,
    smooth: Callable | None = None,
) -> SignalModel:
    """Scalar custom family. ``sensitivity`` is computed numerically when omitted."""
    return SignalModel(
        family="custom",
        statistic=statistic,
        derivative=derivative,
        sampler=sampler,
        mean_stat=float(mean_stat),
        var_stat=float(var_stat),
        lower=support[0],
        upper=support[1],
        sensitivity=sensitivity,
        smooth=smooth,
    )


def global_sensitivity(model: SignalModel) -> float:
    """Supremum of |xi'| over the support, or ``UNBOUNDED``."""
    if model.sensitivity is not None:
        return float(model.sensitivity)
    lo, hi = model.lower, model.upper
    if not (math.isfinite(lo) and math.isfinite(hi)):
        # an unbounded support cannot be certified numerically
        return UNBOUNDED
    grid = np.linspace(lo, hi, 2001)
    vals = np.abs(model.derivative(grid))
    if not np.all(np.isfinite(vals)):
        return UNBOUNDED
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda s: -abs(float(model.derivative(np.array(s)))), bounds=(a, b), method="bounded")
    return float(max(vals[k], -res.fun))


@dataclass(frozen=True)
class SensitivitySpec:
    """How noise is calibrated for a model: global Delta or smooth S*(s).

    For the smooth kind ``delta`` is the leak probability and the smoothing
    parameter follows from the budget passed to :meth:`value_at`.
    """

    kind: str  # "global" | "smooth"
    delta_global: float = UNBOUNDED
    delta: float = 0.0
    smooth_fn: Callable | None = None

    def gamma(self, eps: float) -> float:
        return smoothing_parameter(eps, self.delta)

    def value_at(self, s, eps) -> np.ndarray:
        """Sensitivity at realized signal(s) s for budget(s) eps."""
        if self.kind == "global":
            return np.broadcast_to(np.float64(self.delta_global), np.broadcast(np.asarray(s), np.asarray(eps)).shape)
        return self.smooth_fn(s, eps, self.delta)

    @property
    def guarantee(self) -> str:
        return "eps-DP" if self.kind == "global" else "(eps,delta)-DP"


def sensitivity_spec(model: SignalModel, delta: float | None = 0.01) -> SensitivitySpec:
    """Pick the global path when Delta is finite, otherwise the smooth path."""
    d = global_sensitivity(model)
    if not is_unbounded(d):
        return SensitivitySpec("global", delta_global=d)
    if model.smooth is None or not delta:
        raise UnboundedSensitivity(f"{model.family}: global sensitivity is unbounded and no smooth fallback is configured")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return SensitivitySpec("smooth", delta_global=d, delta=delta, smooth_fn=model.smooth)


def smooth_sensitivity(model: SignalModel, s, eps: float, delta: float) -> np.ndarray:
    """gamma-smooth sensitivity S*(s) with gamma = eps / (2 log(2/delta))."""
    if eps <= 0 or not 0 < delta < 1:
        raise ValueError("need eps > 0 and 0 < delta < 1")
    s = np.asarray(s, dtype=float)
    if not np.all(model.in_support(s)):
        raise OutOfSupport(f"signal outside the support of {model.family}")
    if model.smooth is not None:
        return model.smooth(s, eps, delta)
    d = global_sensitivity(model)
    if is_unbounded(d):
        raise UnboundedSensitivity("no smooth sensitivity available for this model")
    return np.full_like(s, d)


def smooth_sensitivity_numeric(local_at_distance: Callable[[float], float], gamma: float, k_max: float) -> float:
    """max_{0<k<=k_max} exp(-gamma k) * L(k) by bounded scalar search over a coarse grid."""
    ks = np.linspace(k_max / 4096, k_max, 4096)
    vals = np.exp(-gamma * ks) * np.array([local_at_distance(k) for k in ks])
    i = int(np.argmax(vals))
    a, b = ks[max(i - 1, 0)], ks[min(i + 1, len(ks) - 1)]
    res = optimize.minimize_scalar(lambda k: -math.exp(-gamma * k) * local_at_distance(k), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12})
    return float(max(vals[i], -res.fun))


def mvue_target(statistics) -> float:
    """Centralised minimum-variance unbiased estimate: the mean of xi(s_i)."""
    x = np.asarray(statistics, dtype=float)
    if x.size == 0:
        raise EmptyInput("mvue_target needs at least one statistic")
    return float(x.mean())
