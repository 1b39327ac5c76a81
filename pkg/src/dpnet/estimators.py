"""Round-synchronous private consensus dynamics.

All algorithms are affine updates of the form ``a * A nu + b * nu + c * x``
applied to an ``(n, R)`` block of R independent replicates, so one kernel
call advances every replicate. Each run carries a noiseless shadow state
``mu`` driven by the same signals, which isolates the cost of privacy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from . import kernels, streams
from .errors import DimensionMismatch, InvalidLearningRate, NonMixingWarning
from .graph import MixingMatrix, TopologySequence
from .privacy import NoiseLog, NoisePlan, draw_laplace
from .signals import SignalModel

ALGORITHMS = (
    "mvue_nonprivate",
    "mvue_dp",
    "online_signal_dp",
    "online_network_dp",
    "online_nonprivate",
    "rizk_baseline",
    "online_dynamic",
)
MVUE_FAMILY = ("mvue_nonprivate", "mvue_dp", "rizk_baseline")
DEFAULT_ETA = 0.001


@dataclass(frozen=True)
class EstimatorState:
    """Private estimates ``nu`` and noiseless shadow ``mu`` after ``round`` updates.

    Arrays are ``(n,)`` for a single run or ``(n, R)`` for R replicates.
    """

    nu: np.ndarray
    mu: np.ndarray
    round: int = 0

    def __post_init__(self):
        if self.nu.shape != self.mu.shape:
            raise DimensionMismatch(f"nu {self.nu.shape} and mu {self.mu.shape} differ")

    @classmethod
    def start(cls, values, noise=None, round_: int = 0) -> "EstimatorState":
        mu = np.array(values, dtype=float)
        nu = mu.copy() if noise is None else mu + np.asarray(noise, dtype=float)
        return cls(nu, mu, round_)

    @property
    def n(self) -> int:
        return self.nu.shape[0]


def _check(state: EstimatorState, A: MixingMatrix, *arrays) -> None:
    if A.n != state.n:
        raise DimensionMismatch(f"matrix has {A.n} nodes, state has {state.n}")
    for arr in arrays:
        if arr is not None and np.shape(arr)[0] != state.n:
            raise DimensionMismatch(f"input has {np.shape(arr)[0]} rows, state has {state.n}")


def _advance(state, A, a, b, c, xi, noise, backend=None) -> EstimatorState:
    if xi is None:
        nu = kernels.mix(A, state.nu, a, b, backend=backend)
        mu = kernels.mix(A, state.mu, a, b, backend=backend)
    else:
        x_priv = xi if noise is None else np.asarray(xi) + noise
        nu = kernels.mix(A, state.nu, a, b, c, x_priv, backend=backend)
        mu = kernels.mix(A, state.mu, a, b, c, xi, backend=backend)
    return EstimatorState(nu, mu, state.round + 1)


def mvue_step(state: EstimatorState, A: MixingMatrix, backend: str | None = None) -> EstimatorState:
    """nu_t = A nu_{t-1}; noise enters only through the initial state."""
    _check(state, A)
    return _advance(state, A, 1.0, 0.0, 0.0, None, None, backend)


def online_signal_dp_step(state: EstimatorState, A: MixingMatrix, xi_t, noise_t=None,
                          backend: str | None = None) -> EstimatorState:
    """nu_t = ((t-1)/t) A nu_{t-1} + (1/t)(xi_t + d_t)."""
    _check(state, A, xi_t, noise_t)
    t = state.round + 1
    return _advance(state, A, (t - 1) / t, 0.0, 1.0 / t, xi_t, noise_t, backend)


def online_network_dp_step(state: EstimatorState, A: MixingMatrix, xi_t, noise_t=None,
                           backend: str | None = None) -> EstimatorState:
    """nu_t = ((t-2)/t) nu_{t-1} + (1/t) A nu_{t-1} + (1/t)(xi_t + d_t).

    At t = 1 the self-coefficient a_ii - 1 is negative; it multiplies nu_0
    and is kept as is.
    """
    _check(state, A, xi_t, noise_t)
    t = state.round + 1
    return _advance(state, A, 1.0 / t, (t - 2) / t, 1.0 / t, xi_t, noise_t, backend)


def online_dynamic_step(state: EstimatorState, A_t: MixingMatrix, xi_t, noise_t=None,
                        backend: str | None = None) -> EstimatorState:
    """Signal-DP online update with the round's own mixing matrix A(t)."""
    return online_signal_dp_step(state, A_t, xi_t, noise_t, backend)


def check_learning_rate(A: MixingMatrix, eta: float) -> None:
    """Reject rates that make A - eta I expansive; warn if some a_ii - eta < 0."""
    if not 0 < eta < 1:
        raise InvalidLearningRate(f"learning rate must lie in (0, 1), got {eta}")
    lam_min = float(A.spectrum.eigenvalues[-1])
    if lam_min - eta <= -1:
        raise InvalidLearningRate(f"lambda_n(A) - eta = {lam_min - eta:.4g} <= -1; the recursion diverges")
    if eta >= A.diagonal.min():
        warnings.warn(
            f"eta = {eta} >= min a_ii = {A.diagonal.min():.4g}; some self-weights a_ii - eta are negative",
            RuntimeWarning,
            stacklevel=3,
        )


def rizk_baseline_step(state: EstimatorState, A: MixingMatrix, xi, eta: float, noise_t=None,
                       backend: str | None = None) -> EstimatorState:
    """nu_t = (A - eta I) nu_{t-1} + eta xi + d_t with the round-0 statistics xi reused."""
    _check(state, A, xi, noise_t)
    if eta < 0:
        raise InvalidLearningRate("learning rate must be nonnegative")
    drive = eta * np.asarray(xi, dtype=float)
    return _advance(state, A, 1.0, -eta, 1.0, drive, noise_t, backend)


# ---------------------------------------------------------------- signals


class SignalSource(Protocol):
    node_count: int

    def round(self, t: int, replicates: range) -> tuple[np.ndarray, np.ndarray]:
        """Raw signals and statistics for round t, both (n, R)."""

    def expected_statistic(self) -> float | None: ...


class ModelSource:
    """i.i.d. signals from a model; replicate r owns stream (seed, 'signal', r).

    Each call to :meth:`round` consumes n draws from every replicate stream,
    so the sequence for replicate r is independent of how many replicates run.
    Rounds must be requested in increasing order.
    """

    def __init__(self, model: SignalModel, n: int, seed: int):
        self.model = model
        self.node_count = n
        self.seed = seed
        self._rngs: dict[int, np.random.Generator] = {}
        self._next: dict[int, int] = {}

    def _rng(self, r: int) -> np.random.Generator:
        g = self._rngs.get(r)
        if g is None:
            g = self._rngs[r] = streams.stream(self.seed, "signal", r)
            self._next[r] = -1
        return g

    def round(self, t: int, replicates: range):
        cols = []
        for r in replicates:
            g = self._rng(r)
            if t <= self._next[r]:
                raise RuntimeError(f"round {t} already drawn for replicate {r}")
            cols.append(self.model.sample(g, self.node_count))
            self._next[r] = t
        s = np.column_stack(cols)
        return s, self.model.xi(s)

    def expected_statistic(self) -> float:
        return self.model.mean_stat


class ArraySource:
    """Pre-recorded signals ``raw[i, t]`` (e.g. ingested meter data), shared by all replicates.

    Round t uses column ``t`` for MVUE-type runs (t = 0) and column ``t - 1``
    for online runs (t >= 1), so an online run of horizon T reads columns 0..T-1.
    """

    def __init__(self, raw: np.ndarray, statistic: Callable[[np.ndarray], np.ndarray], online_offset: int = 1):
        self.raw = np.asarray(raw, dtype=float)
        if self.raw.ndim != 2:
            raise DimensionMismatch("signal array must be (n, T)")
        self.stat = statistic(self.raw)
        self.node_count = self.raw.shape[0]
        self.online_offset = online_offset

    def round(self, t: int, replicates: range):
        col = max(t - self.online_offset, 0) if t > 0 else 0
        if col >= self.raw.shape[1]:
            raise DimensionMismatch(f"signal array has {self.raw.shape[1]} rounds, round {t} requested")
        R = len(replicates)
        s = np.repeat(self.raw[:, col:col + 1], R, axis=1)
        x = np.repeat(self.stat[:, col:col + 1], R, axis=1)
        return s, x

    def expected_statistic(self) -> float:
        return float(self.stat.mean())


# ---------------------------------------------------------------- runs


@dataclass
class RunConfig:
    algorithm: str
    horizon: int
    plan: NoisePlan | None = None
    eta: float = DEFAULT_ETA
    signal_seed: int = 0
    noise_seed: int = 1
    graph_seed: int = 0
    replicates: int = 1
    replicate_offset: int = 0
    initial: float | np.ndarray = 0.0
    snapshot_every: int | None = None
    record_draws: bool = False
    per_round_noise: bool = False  # negative-test variant of MVUE with noise every round
    backend: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.horizon < 0 or (self.horizon < 1 and self.algorithm not in MVUE_FAMILY):
            raise ValueError("horizon must be positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        private = self.algorithm in ("mvue_dp", "online_signal_dp", "online_network_dp", "rizk_baseline", "online_dynamic")
        if private and self.plan is None and self.algorithm not in ("rizk_baseline", "online_dynamic"):
            raise ValueError(f"{self.algorithm} needs a noise plan")
        if self.plan is not None and self.algorithm in ("mvue_nonprivate", "online_nonprivate"):
            raise ValueError(f"{self.algorithm} takes no noise plan")
        if self.plan is not None:
            want = "mvue" if self.algorithm in MVUE_FAMILY else "online"
            if self.plan.task != want:
                raise ValueError(f"{self.algorithm} needs a {want} noise plan, got {self.plan.task}")
            if self.algorithm == "online_signal_dp" and self.plan.regime != "signal_dp":
                raise ValueError("online_signal_dp needs a signal_dp plan")
            if self.algorithm == "online_network_dp" and self.plan.regime != "network_dp":
                raise ValueError("online_network_dp needs a network_dp plan")

    @property
    def task(self) -> str:
        return "mvue" if self.algorithm in MVUE_FAMILY else "online"

    @property
    def replicate_range(self) -> range:
        return range(self.replicate_offset, self.replicate_offset + self.replicates)


class _Noise:
    """Per-replicate noise streams; replicate r owns stream (seed, 'noise', r)."""

    def __init__(self, seed: int, replicates: range):
        self.rngs = streams.replicate_streams(seed, "noise", replicates)

    def draw(self, scales: np.ndarray) -> np.ndarray:
        out = np.empty_like(scales)
        for k, g in enumerate(self.rngs):
            out[:, k] = draw_laplace(scales[:, k], g)
        return out


def rizk_scales(plan: NoisePlan, A: MixingMatrix, signals: np.ndarray, horizon: int, eta: float) -> np.ndarray:
    """Per-release scales for the first-order baseline with budget eps/T per release.

    signal_dp: eta T D / eps. network_dp: T max(a_i, eta D) / eps, where D is
    the effective sensitivity at the run budget.
    """
    from .privacy import effective_sensitivity

    eps = np.asarray(plan.budget, dtype=float)
    if eps.ndim == 1:
        eps = eps[:, None]
    d = effective_sensitivity(plan.sensitivity, signals, eps)
    if plan.regime == "signal_dp":
        b = eta * horizon * d / eps
    else:
        b = horizon * np.maximum(A.max_neighbor_weight[:, None], eta * d) / eps
    return np.broadcast_to(b, signals.shape).copy()


def _initial(value, n: int, R: int) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return np.full((n, R), float(v))
    if v.ndim == 1:
        if v.shape[0] != n:
            raise DimensionMismatch(f"initial vector has {v.shape[0]} entries for {n} agents")
        return np.repeat(v[:, None], R, axis=1)
    if v.shape != (n, R):
        raise DimensionMismatch(f"initial state must be ({n}, {R})")
    return v.copy()


def _matrix_at(graph, t: int) -> MixingMatrix:
    return graph.matrix(t) if isinstance(graph, TopologySequence) else graph


def run(config: RunConfig, graph: MixingMatrix | TopologySequence, source: SignalSource | SignalModel):
    """Drive one configuration over all replicates and return a :class:`~dpnet.metrics.RunTrace`."""
    from .metrics import RunTrace, TraceRecorder, column_means

    if isinstance(source, SignalModel):
        n = graph.node_count if isinstance(graph, TopologySequence) else graph.n
        source = ModelSource(source, n, config.signal_seed)
    if isinstance(graph, TopologySequence) and config.algorithm != "online_dynamic":
        raise ValueError("time-varying graphs are only supported by online_dynamic")
    A0 = _matrix_at(graph, 1)
    n = A0.n
    if source.node_count != n:
        raise DimensionMismatch(f"graph has {n} nodes, signal source {source.node_count}")
    if A0.non_mixing and not isinstance(graph, TopologySequence):
        warnings.warn("running on a non-mixing matrix (beta* = 1)", NonMixingWarning, stacklevel=2)

    reps = config.replicate_range
    R = len(reps)
    plan = config.plan
    noise = _Noise(config.noise_seed, reps) if plan is not None else None
    log = NoiseLog(plan.regime if plan else "none") if config.record_draws else None
    a_i = A0.max_neighbor_weight if plan is not None and plan.regime == "network_dp" else None
    T = config.horizon
    alg = config.algorithm

    def noisy(scales, signals, t):
        d = noise.draw(scales)
        rec.add_noise(scales)
        if log is not None:
            for k, r in enumerate(reps):
                log.append(t, scales[:, k], d[:, k], signals[:, k], replicate=r)
        return d

    if config.task == "mvue":
        s0, xi0 = source.round(0, reps)
        target = np.broadcast_to(column_means(xi0), xi0.shape)
        rec = TraceRecorder(config, n, R, target)
        if alg == "rizk_baseline":
            check_learning_rate(A0, config.eta)
            state = EstimatorState.start(_initial(config.initial, n, R))
            rec.record(state, xi0)
            scales = None if plan is None else rizk_scales(plan, A0, s0, max(T, 1), config.eta)
            for t in range(1, T + 1):
                d = None if plan is None else noisy(scales, s0, t)
                state = rizk_baseline_step(state, A0, xi0, config.eta, d, config.backend)
                rec.record(state, xi0)
        else:
            d0 = None
            scales = None
            if alg == "mvue_dp":
                scales = plan.scales(s0, a_i)
                d0 = noisy(scales, s0, 0)
            state = EstimatorState.start(xi0, d0)
            rec.record(state, xi0)
            for t in range(1, T + 1):
                state = mvue_step(state, A0, config.backend)
                if config.per_round_noise and scales is not None:
                    d = noisy(scales, s0, t)
                    state = replace(state, nu=state.nu + d)
                rec.record(state, xi0)
    else:
        m = source.expected_statistic()
        rec = TraceRecorder(config, n, R, None if m is None else np.full((n, R), m))
        state = EstimatorState.start(_initial(config.initial, n, R))
        rec.record(state, None)
        step = {
            "online_signal_dp": online_signal_dp_step,
            "online_nonprivate": online_signal_dp_step,
            "online_network_dp": online_network_dp_step,
            "online_dynamic": online_dynamic_step,
        }[alg]
        for t in range(1, T + 1):
            A = _matrix_at(graph, t)
            s, xi = source.round(t, reps)
            d = None
            if plan is not None:
                a_t = A.max_neighbor_weight if plan.regime == "network_dp" else None
                d = noisy(plan.scales(s, a_t), s, t)
            state = step(state, A, xi, d, config.backend)
            rec.record(state, xi)
    return rec.finish(graph=A0, source=source, noise_log=log)


def unrolled_online_signal(A: np.ndarray, inputs: list[np.ndarray]) -> np.ndarray:
    """(1/t) sum_{tau=0}^{t-1} A^tau (xi_{t-tau} + d_{t-tau}) for inputs[k] = xi_{k+1} + d_{k+1}."""
    t = len(inputs)
    acc = np.zeros_like(np.asarray(inputs[0], dtype=float))
    P = np.eye(A.shape[0])
    for tau in range(t):
        acc = acc + P @ inputs[t - 1 - tau]
        P = A @ P
    return acc / t


def unrolled_online_network(A: np.ndarray, inputs: list[np.ndarray]) -> np.ndarray:
    """Closed form of the network-DP online recursion started from nu_0 = 0.

    t nu_t = sum_{k=1}^t prod_{j=k+1}^t ((j-2) I + A) / (j-1) x_k.
    """
    n = A.shape[0]
    t = len(inputs)
    acc = np.zeros_like(np.asarray(inputs[0], dtype=float))
    for k in range(1, t + 1):
        v = np.asarray(inputs[k - 1], dtype=float)
        for j in range(k + 1, t + 1):
            v = ((j - 2) * v + A @ v) / (j - 1)
        acc = acc + v
    return acc / t


def network_product(A: np.ndarray, t: int) -> np.ndarray:
    """Phi(t) = prod_{tau=1}^t C(tau) with C(tau) = ((tau-2)/tau) I + A / tau."""
    n = A.shape[0]
    P = np.eye(n)
    for tau in range(1, t + 1):
        P = (((tau - 2) / tau) * np.eye(n) + A / tau) @ P
    return P
