"""Empirical error decomposition and theoretical total-error bounds."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, PeriodicChain

SUMMARY_COLUMNS = ("algorithm", "regime", "epsilon", "t", "TE_mean", "TE_se", "CoP_mean", "CoD_mean", "bound", "MSE_mean")


def column_norms(x) -> np.ndarray:
    """Euclidean norm of each column, summed in the same order whatever the column count."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.sqrt(np.square(np.ascontiguousarray(x.T)).sum(axis=1))


def column_means(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.ascontiguousarray(x.T).mean(axis=1)


def empirical_errors(nu, mu, target):
    """Euclidean norms (TE, CoP, CoD) = (|nu - target|, |nu - mu|, |mu - target|).

    Inputs of shape (n, R) give one triple per column.
    """
    nu, mu = np.asarray(nu, dtype=float), np.asarray(mu, dtype=float)
    target = np.asarray(target, dtype=float)
    if target.ndim == 1 and nu.ndim == 2:
        target = target[:, None]
    if nu.shape != mu.shape or target.shape[0] != nu.shape[0]:
        raise DimensionMismatch(f"shapes {nu.shape}, {mu.shape}, {target.shape} differ")
    te, cop, cod = column_norms(nu - target), column_norms(nu - mu), column_norms(mu - target)
    if nu.ndim == 1:
        return float(te[0]), float(cop[0]), float(cod[0])
    return te, cop, cod


def mvue_bound(t, n: int, beta_star: float, M_n: float, var_sum: float, form: str = "consensus_first"):
    """Total-error bound for private MVUE consensus after t rounds.

    consensus_first: sqrt(n(n-1)) b^t M_n + sqrt(V) (1 + sqrt(n-1) b^t)
    noise_first:     (1 + sqrt(n-1) b^t) sqrt(V) + sqrt(n(n-1)) b^t M_n
    with b = beta* and V the summed noise variance. The two are the same
    expression grouped differently.
    """
    if not 0 <= beta_star <= 1:
        raise ValueError("beta* must lie in [0, 1]")
    bt = np.power(beta_star, np.asarray(t, dtype=float))
    sv = math.sqrt(var_sum)
    if form == "consensus_first":
        return math.sqrt(n * (n - 1)) * bt * M_n + sv * (1 + math.sqrt(n - 1) * bt)
    if form == "noise_first":
        return (1 + math.sqrt(n - 1) * bt) * sv + math.sqrt(n * (n - 1)) * bt * M_n
    raise ValueError(f"unknown form {form!r}")


def _online_core(t, n, var_xi, var_sum):
    t = np.asarray(t, dtype=float)
    return (np.sqrt(n * t * var_xi) + np.sqrt(var_sum)) / t


def online_signal_bound(t, n: int, beta_star: float, var_xi: float, var_sum):
    """(1/t)(sqrt(n t var xi) + sqrt(sum var d)) (1 + sqrt((n-1)/(1 - b^2)))."""
    if n == 1:
        factor = 1.0
    else:
        if beta_star >= 1:
            raise PeriodicChain("the online signal-DP bound needs beta* < 1")
        factor = 1 + math.sqrt((n - 1) / (1 - beta_star**2))
    return _online_core(t, n, var_xi, var_sum) * factor


def online_network_bound(t, n: int, beta_star: float, var_xi: float, var_sum):
    """(1/t)(sqrt(n t var xi) + sqrt(sum var d)) (1 + sqrt((n-1)/(3 - 2b)))."""
    if not 0 <= beta_star <= 1:
        raise ValueError("beta* must lie in [0, 1]")
    factor = 1 + math.sqrt((n - 1) / (3 - 2 * beta_star))
    return _online_core(t, n, var_xi, var_sum) * factor


def network_factor_gap(n: int, beta_star: float) -> float:
    """Signal-DP network factor minus the network-DP one (reported, not asserted)."""
    return (1 + math.sqrt((n - 1) / (1 - beta_star**2))) - (1 + math.sqrt((n - 1) / (3 - 2 * beta_star)))


@dataclass
class BoundReport:
    rounds: np.ndarray
    values: np.ndarray
    kind: str
    inputs: dict


@dataclass
class RunTrace:
    """Per-round error metrics for every replicate of one configuration."""

    algorithm: str
    regime: str
    epsilon: float | None
    rounds: np.ndarray
    te: np.ndarray  # (rounds, R)
    cop: np.ndarray
    cod: np.ndarray
    mse: np.ndarray
    M_n: np.ndarray  # (R,)
    var_sum: np.ndarray  # (rounds, R) cumulative noise variance
    metadata: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    noise_log: object = None
    final_nu: np.ndarray | None = None
    final_mu: np.ndarray | None = None

    @property
    def replicates(self) -> int:
        return self.te.shape[1]

    def mean(self, name: str) -> np.ndarray:
        return getattr(self, name).mean(axis=1)

    def se(self, name: str) -> np.ndarray:
        x = getattr(self, name)
        if x.shape[1] < 2:
            return np.zeros(x.shape[0])
        return x.std(axis=1, ddof=1) / math.sqrt(x.shape[1])

    def at(self, t: int) -> int:
        idx = np.flatnonzero(self.rounds == t)
        if not idx.size:
            raise KeyError(f"round {t} not recorded")
        return int(idx[0])

    def per_round_records(self):
        te_m, te_s = self.mean("te"), self.se("te")
        cop_m, cod_m, mse_m = self.mean("cop"), self.mean("cod"), self.mean("mse")
        for k, t in enumerate(self.rounds):
            yield {
                "t": int(t),
                "TE_mean": float(te_m[k]),
                "TE_se": float(te_s[k]),
                "CoP_mean": float(cop_m[k]),
                "CoD_mean": float(cod_m[k]),
                "MSE_mean": float(mse_m[k]),
            }

    def to_jsonl(self, path: str | Path, append: bool = False) -> None:
        head = {"algorithm": self.algorithm, "regime": self.regime, "epsilon": self.epsilon}
        with open(path, "a" if append else "w") as fh:
            for rec in self.per_round_records():
                fh.write(json.dumps({**head, **rec}) + "\n")

    def summary_row(self, bound: BoundReport | None = None, t: int | None = None) -> dict:
        k = len(self.rounds) - 1 if t is None else self.at(t)
        rec = list(self.per_round_records())[k]
        b = float("nan")
        if bound is not None:
            b = float(bound.values[np.flatnonzero(bound.rounds == rec["t"])[0]])
        return {
            "algorithm": self.algorithm,
            "regime": self.regime,
            "epsilon": self.epsilon,
            "t": rec["t"],
            "TE_mean": rec["TE_mean"],
            "TE_se": rec["TE_se"],
            "CoP_mean": rec["CoP_mean"],
            "CoD_mean": rec["CoD_mean"],
            "bound": b,
            "MSE_mean": rec["MSE_mean"],
        }


class TraceRecorder:
    """Accumulates per-round metrics during :func:`dpnet.estimators.run`."""

    def __init__(self, config, n: int, R: int, target):
        self.config = config
        self.n, self.R = n, R
        self.target = target
        self.rounds: list[int] = []
        self.rows: dict[str, list[np.ndarray]] = {"te": [], "cop": [], "cod": [], "mse": [], "var": []}
        self.var_total = np.zeros(R)
        self.M_n = np.zeros(R)
        self.stat_sq = np.zeros(R)
        self.snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.last = None

    def add_noise(self, scales: np.ndarray) -> None:
        self.var_total = self.var_total + np.ascontiguousarray((2.0 * np.square(scales)).T).sum(axis=1)

    def record(self, state, xi) -> None:
        t = state.round
        if xi is not None:
            self.M_n = np.maximum(self.M_n, np.abs(xi).max(axis=0))
        if self.target is None:
            te = cod = mse = np.full(self.R, np.nan)
            cop = column_norms(state.nu - state.mu)
        else:
            te, cop, cod = empirical_errors(state.nu, state.mu, self.target)
            mse = np.square(te) / self.n
        self.rounds.append(t)
        for key, val in (("te", te), ("cop", cop), ("cod", cod), ("mse", mse), ("var", self.var_total)):
            self.rows[key].append(np.asarray(val, dtype=float).copy())
        every = self.config.snapshot_every
        if every and t % every == 0:
            self.snapshots[t] = (state.nu.copy(), state.mu.copy())
        self.last = state

    def finish(self, graph=None, source=None, noise_log=None) -> RunTrace:
        cfg = self.config
        plan = cfg.plan
        eps = None
        if plan is not None:
            eps = float(np.mean(plan.budget)) if plan.heterogeneous else float(plan.budget)
            if plan.average_budget is not None:
                eps = float(plan.average_budget)
        meta = {
            "algorithm": cfg.algorithm,
            "regime": plan.regime if plan else "none",
            "epsilon": eps,
            "delta": plan.delta if plan else 0.0,
            "guarantee": plan.guarantee if plan else "none",
            "heterogeneous": bool(plan.heterogeneous) if plan else False,
            "n": self.n,
            "horizon": cfg.horizon,
            "replicates": self.R,
            "replicate_offset": cfg.replicate_offset,
            "seeds": {"signal": cfg.signal_seed, "noise": cfg.noise_seed, "graph": cfg.graph_seed},
            "eta": cfg.eta if cfg.algorithm == "rizk_baseline" else None,
            "ci_method": "normal approximation, mean +/- 1.96 se",
            "M_n_mean": float(self.M_n.mean()),
        }
        if plan is not None:
            spec = plan.sensitivity
            meta["sensitivity"] = {"kind": spec.kind, "global": None if math.isinf(spec.delta_global) else spec.delta_global,
                                   "delta": spec.delta}
        if graph is not None:
            meta["beta_star"] = float(graph.beta_star)
            meta["weight_rule"] = graph.rule
        if source is not None and hasattr(source, "model"):
            meta["signal_family"] = source.model.family
            meta["signal_params"] = list(source.model.params)
            meta["var_stat"] = source.model.var_stat
        stack = {k: np.vstack(v) for k, v in self.rows.items()}
        return RunTrace(
            algorithm=cfg.algorithm,
            regime=meta["regime"],
            epsilon=eps,
            rounds=np.asarray(self.rounds),
            te=stack["te"],
            cop=stack["cop"],
            cod=stack["cod"],
            mse=stack["mse"],
            M_n=self.M_n.copy(),
            var_sum=stack["var"],
            metadata=meta,
            snapshots=self.snapshots,
            noise_log=noise_log,
            final_nu=self.last.nu if self.last is not None else None,
            final_mu=self.last.mu if self.last is not None else None,
        )


def bound_report(trace: RunTrace, var_xi: float | None = None) -> BoundReport | None:
    """Theoretical total-error bound for every recorded round of a trace.

    Replicate-dependent inputs (M_n, noise variance) enter at their
    replicate means; the bounds are concave in both, so the result still
    dominates the expected error.
    """
    meta = trace.metadata
    n, beta = meta["n"], meta.get("beta_star")
    if beta is None:
        return None
    alg = trace.algorithm
    V = trace.var_sum.mean(axis=1)
    t = trace.rounds
    if alg in ("mvue_dp", "mvue_nonprivate"):
        M = float(trace.M_n.mean())
        vals = mvue_bound(t, n, beta, M, float(V[-1]))
        return BoundReport(t, np.asarray(vals, dtype=float), "mvue", {"n": n, "beta_star": beta, "M_n": M, "var_sum": float(V[-1])})
    if alg in ("online_signal_dp", "online_nonprivate", "online_network_dp"):
        vx = meta.get("var_stat") if var_xi is None else var_xi
        if vx is None:
            return None
        tt = np.maximum(t, 1)
        fn = online_network_bound if alg == "online_network_dp" else online_signal_bound
        if beta >= 1 and fn is online_signal_bound and n > 1:
            return None
        vals = fn(tt, n, beta, vx, V)
        vals = np.where(t == 0, np.nan, vals)
        return BoundReport(t, np.asarray(vals, dtype=float), alg, {"n": n, "beta_star": beta, "var_xi": vx})
    return None


def write_summary_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k) for k in SUMMARY_COLUMNS})


def loglog_slope(t, values) -> float:
    """Least-squares slope of log(values) against log(t)."""
    x, y = np.log(np.asarray(t, dtype=float)), np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
