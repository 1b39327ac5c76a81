"""Laplace noise calibration, sampling and privacy accounting."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import UnboundedSensitivity
from .signals import SensitivitySpec, is_unbounded
from .streams import open_uniform

REGIMES = ("signal_dp", "network_dp")
TASKS = ("mvue", "online")
DEFAULT_DELTA = 0.01
RATIO_SLACK = 1e-12


def effective_sensitivity(spec: SensitivitySpec, signals, eps) -> np.ndarray:
    """Sensitivity multiplying 1/eps in the Laplace scale.

    Global path: Delta. Smooth path: 2 S*(s), the admissible scale for
    (eps, delta)-DP under smooth-sensitivity calibration.
    """
    if spec.kind == "global":
        if is_unbounded(spec.delta_global):
            raise UnboundedSensitivity("global sensitivity is unbounded and no smooth fallback is configured")
        return spec.value_at(signals, eps)
    return 2.0 * spec.value_at(signals, eps)


def laplace_scale(regime: str, task: str, sensitivity: SensitivitySpec, eps, max_neighbor_weight=None, signals=None):
    """Laplace scale b for each agent.

    signal_dp: b = D / eps. network_dp: b = max(a_i, D) / eps, where a_i is the
    largest off-diagonal weight in row i and D the effective sensitivity.
    Arguments broadcast, so per-agent arrays give per-agent scales.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("privacy budget must be positive")
    if sensitivity.kind == "smooth" and signals is None:
        raise ValueError("smooth sensitivity needs the realized signals")
    d = effective_sensitivity(sensitivity, 0.0 if signals is None else signals, eps)
    if regime == "network_dp":
        if max_neighbor_weight is None:
            raise ValueError("network_dp needs the max neighbour weight a_i")
        a = np.asarray(max_neighbor_weight, dtype=float)
        if np.any((a < 0) | (a >= 1)):
            raise ValueError("max neighbour weight must lie in [0, 1)")
        d = np.maximum(a, d)
    b = d / eps
    return float(b) if np.ndim(b) == 0 else b


def laplace_icdf(u, b):
    """Inverse CDF of Laplace(0, b); u = 0.5 maps exactly to 0."""
    u = np.asarray(u, dtype=float)
    c = u - 0.5
    return -np.asarray(b) * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def laplace_logpdf(x, b):
    return -np.log(2.0 * b) - np.abs(x) / b


def draw_laplace(b, rng: np.random.Generator, size=None):
    """Zero-mean Laplace draws with scale b via the inverse CDF."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("Laplace scale must be positive")
    shape = b.shape if size is None else size
    return laplace_icdf(open_uniform(rng, shape), b)


@dataclass(frozen=True)
class DPCheck:
    passed: bool
    max_ratio: float
    eps: float


def dp_density_ratio_check(b: float, sensitivity: float, eps: float) -> DPCheck:
    """Worst-case privacy loss of a Laplace(b) release with the given sensitivity.

    sup_x |log p_b(x - D) - log p_b(x)| = D / b, attained for |x| large.
    """
    if b <= 0 or sensitivity <= 0 or eps <= 0:
        raise ValueError("b, sensitivity and eps must be positive")
    ratio = sensitivity / b
    return DPCheck(ratio <= eps + RATIO_SLACK, ratio, eps)


def composition_budget(per_release_eps: float, k: int) -> float:
    """Basic sequential composition over k releases."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return k * per_release_eps


@dataclass
class NoisePlan:
    """Per-agent, per-round noise calibration for one run.

    ``budget`` is a scalar eps or a per-agent vector. ``average_budget`` is
    the eps-bar that heterogeneous budgets must respect when the joint-release
    guard is on (sum eps_i <= n eps-bar).
    """

    regime: str
    task: str
    sensitivity: SensitivitySpec
    budget: float | np.ndarray
    delta: float = 0.0
    average_budget: float | None = None
    joint_release_guard: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES or self.task not in TASKS:
            raise ValueError(f"bad regime/task {self.regime}/{self.task}")
        b = np.asarray(self.budget, dtype=float)
        if np.any(b <= 0):
            raise ValueError("privacy budgets must be positive")
        if self.sensitivity.kind == "smooth":
            self.delta = self.sensitivity.delta
        if self.heterogeneous and self.joint_release_guard and self.average_budget is not None:
            total = b.sum(axis=0)
            cap = b.shape[0] * self.average_budget
            if np.any(total > cap * (1 + 1e-9)):
                raise ValueError(f"heterogeneous budgets sum to {total.max():.6g} > n*eps_bar = {cap:.6g}")

    @property
    def heterogeneous(self) -> bool:
        return np.ndim(self.budget) > 0

    @property
    def guarantee(self) -> str:
        return self.sensitivity.guarantee

    def budget_for(self, n: int) -> np.ndarray:
        b = np.asarray(self.budget, dtype=float)
        if b.ndim == 0:
            return np.full(n, float(b))
        if b.shape[0] != n:
            raise ValueError(f"budget vector has {b.shape[0]} entries for {n} agents")
        return b

    def scales(self, signals, max_neighbor_weight=None) -> np.ndarray:
        """Scales for a block of signals shaped (n,) or (n, R)."""
        s = np.asarray(signals, dtype=float)
        eps = np.asarray(self.budget, dtype=float)
        a = max_neighbor_weight
        if s.ndim == 2:
            if eps.ndim == 1:
                eps = eps[:, None]
            if a is not None:
                a = np.asarray(a)[:, None]
        b = laplace_scale(self.regime, self.task, self.sensitivity, eps, a, s)
        return np.broadcast_to(b, s.shape).copy()


@dataclass(frozen=True)
class NoiseDraw:
    agent: int
    round: int
    value: float
    scale: float
    signal: float | None = None
    replicate: int = 0


class NoiseLog:
    """Append-only record of noise draws; safe to append from several threads."""

    def __init__(self, regime: str):
        self.regime = regime
        self._blocks: list[tuple[int, int, np.ndarray, np.ndarray, np.ndarray | None]] = []
        self._lock = threading.Lock()

    def append(self, round_: int, scales, values, signals=None, replicate: int = 0) -> None:
        block = (
            round_,
            replicate,
            np.array(scales, dtype=float, copy=True),
            np.array(values, dtype=float, copy=True),
            None if signals is None else np.array(signals, dtype=float, copy=True),
        )
        with self._lock:
            self._blocks.append(block)

    def __len__(self) -> int:
        return sum(b[2].size for b in self._blocks)

    def __iter__(self) -> Iterator[NoiseDraw]:
        for round_, rep, scales, values, sig in self._blocks:
            for i in range(scales.size):
                yield NoiseDraw(i, round_, float(values[i]), float(scales[i]),
                                None if sig is None else float(sig[i]), rep)

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for d in self:
                rec = {"agent": d.agent, "round": d.round, "scale": d.scale, "value": d.value, "regime": self.regime}
                if d.replicate:
                    rec["replicate"] = d.replicate
                fh.write(json.dumps(rec) + "\n")


def read_noise_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def laplace_variance(b) -> np.ndarray:
    return 2.0 * np.square(b)


def laplace_ode_margin(b: float, u) -> np.ndarray:
    """(1/b) p(u) - |p'(u)| for the Laplace density; nonnegative away from u = 0."""
    u = np.asarray(u, dtype=float)
    p = np.exp(laplace_logpdf(u, b))
    dp = -np.sign(u) * p / b
    return p / b - np.abs(dp)


def guarantee_label(spec: SensitivitySpec) -> str:
    return spec.guarantee


def smoothing_gamma(eps: float, delta: float) -> float:
    return eps / (2.0 * math.log(2.0 / delta))
