"""Experiment orchestration and result export."""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import shutil
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__, budget, graph, kernels, metrics, privacy, signals
from ..errors import ConfigError, DataError, IsolatedNode, NonMixingWarning, ParseError
from ..estimators import MVUE_FAMILY, ArraySource, ModelSource, RunConfig, run
from .config import ExperimentConfig
from .ingest import ingest_consumption

NONPRIVATE = ("mvue_nonprivate", "online_nonprivate")
COMPARISON_COLUMNS = ("regime", "epsilon", "ours_MSE", "ours_MSE_se", "baseline_MSE", "baseline_MSE_se", "ratio")


class Scenario:
    """Graph, signal model and data resolved from a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dataset = None
        self.data = None
        if cfg.signal.data is not None:
            self.dataset = ingest_consumption(cfg.resolve(cfg.signal.data), cfg.signal.divisor)
            self.data = self.dataset.signal_matrix()
        self.topology, self.graph_stats = self._topology()
        self.matrix = graph.build_weights(self.topology, cfg.graph.weights)
        self.model = self._model()
        self.sensitivity = signals.sensitivity_spec(self.model, cfg.delta)

    @property
    def n(self) -> int:
        return self.topology.node_count

    def _topology(self):
        g = self.cfg.graph
        n = self.data.shape[0] if self.data is not None else g.n
        stats = {}
        if g.kind == "file":
            try:
                top, stats = graph.load_edge_list(self.cfg.resolve(g.path), return_stats=True)
            except ParseError as exc:
                raise DataError(str(exc)) from exc
            if self.data is not None and top.node_count != n:
                raise DataError(f"graph has {top.node_count} nodes but the data has {n} households")
        elif g.kind == "geometric":
            top = graph.random_geometric(n, g.radius, seed=self.cfg.seed)
        elif g.kind == "complete":
            top = graph.complete_graph(n)
        elif g.kind == "path":
            top = graph.path_graph(n)
        else:
            top = graph.cycle_graph(n)
        iso = top.isolated_nodes()
        if top.node_count > 1 and iso.size:
            raise DataError(f"graph has {iso.size} isolated node(s), e.g. node {int(iso[0])}; MH weights are undefined")
        return top, stats

    def _model(self) -> signals.SignalModel:
        s = self.cfg.signal
        if s.family == "gaussian":
            return signals.gaussian_known_var(s.mu, s.sigma)
        if self.data is not None:
            logs = np.log(self.data)
            return signals.lognormal_known_var(float(logs.mean()), float(logs.std(ddof=1)), s.s_min)
        return signals.lognormal_known_var(s.mu, s.sigma, s.s_min)

    def source(self):
        if self.data is not None:
            stat = np.log if self.cfg.signal.family == "lognormal" else (lambda v: v)
            return ArraySource(self.data, stat)
        return ModelSource(self.model, self.n, self.cfg.seed)

    def initial_signals(self, reps: range) -> np.ndarray:
        return self.source().round(0, reps)[0]


def heterogeneous_budgets(scn: Scenario, regime: str, eps_bar: float, reps: range, mode: str) -> np.ndarray:
    """Per-replicate allocations (n, R) from the realized round-0 sensitivities."""
    s0 = scn.initial_signals(reps)
    d = privacy.effective_sensitivity(scn.sensitivity, s0, eps_bar)
    if regime == "network_dp":
        d = np.maximum(scn.matrix.max_neighbor_weight[:, None], d)
    d = np.broadcast_to(d, s0.shape)
    caps = scn.cfg.cap_factor * eps_bar
    out = np.empty(s0.shape)
    weights = scn.matrix.dense if mode == "heterogeneous_decentralized" else None
    for k in range(s0.shape[1]):
        prob = budget.BudgetProblem(d[:, k], eps_bar, caps, weights)
        if mode == "heterogeneous_closed":
            out[:, k] = budget.allocate_closed_form(prob).epsilon
        else:
            out[:, k] = budget.allocate_decentralized(prob).epsilon
    return out


def make_plan(scn: Scenario, algorithm: str, regime: str, eps: float, reps: range) -> privacy.NoisePlan | None:
    if algorithm in NONPRIVATE:
        return None
    task = "mvue" if algorithm in MVUE_FAMILY else "online"
    mode = scn.cfg.budget_mode
    if mode == "homogeneous":
        return privacy.NoisePlan(regime, task, scn.sensitivity, eps)
    if task != "mvue" or algorithm == "rizk_baseline":
        raise ConfigError("heterogeneous budgets are supported for the mvue_dp algorithm only")
    alloc = heterogeneous_budgets(scn, regime, eps, reps, mode)
    return privacy.NoisePlan(regime, task, scn.sensitivity, alloc, average_budget=eps)


def merge_traces(parts: list[metrics.RunTrace]) -> metrics.RunTrace:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = lambda name: np.hstack([getattr(p, name) for p in parts])  # noqa: E731
    meta = dict(first.metadata)
    meta["replicates"] = sum(p.replicates for p in parts)
    meta["M_n_mean"] = float(np.concatenate([p.M_n for p in parts]).mean())
    return replace(first, te=cat("te"), cop=cat("cop"), cod=cat("cod"), mse=cat("mse"), var_sum=cat("var_sum"),
                   M_n=np.concatenate([p.M_n for p in parts]), metadata=meta, snapshots={}, noise_log=None,
                   final_nu=cat("final_nu"), final_mu=cat("final_mu"))


def run_one(scn: Scenario, algorithm: str, regime: str, eps: float, replicates: int | None = None,
            workers: int = 1, **overrides) -> metrics.RunTrace:
    cfg = scn.cfg
    R = replicates or cfg.replicates
    chunks = [range(a, min(a + max(1, math.ceil(R / workers)), R)) for a in range(0, R, max(1, math.ceil(R / workers)))]

    def job(reps: range):
        plan = make_plan(scn, algorithm, regime, eps, reps)
        rc = RunConfig(algorithm, cfg.horizon, plan, eta=cfg.eta, signal_seed=cfg.seed, noise_seed=cfg.seed,
                       graph_seed=cfg.seed, replicates=len(reps), replicate_offset=reps.start, **overrides)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # MH self-weights below eta are expected
            warnings.simplefilter("ignore", NonMixingWarning)
            return run(rc, scn.matrix, scn.source())

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    return merge_traces(parts)


def _jobs(cfg: ExperimentConfig):
    for regime in cfg.regimes:
        for alg in cfg.algorithms:
            if alg in NONPRIVATE:
                continue
            for eps in cfg.epsilons:
                yield alg, regime, eps
    for alg in cfg.algorithms:
        if alg in NONPRIVATE:
            yield alg, "none", None


def _atomic_outputs(out_dir: Path, writer) -> dict:
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        names = writer(tmp)
        out_dir.mkdir(exist_ok=True)
        paths = {}
        for key, name in names.items():
            os.replace(tmp / name, out_dir / name)
            paths[key] = out_dir / name
        return paths
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _metadata(scn: Scenario, runs: list[dict]) -> dict:
    cfg = scn.cfg
    A = scn.matrix
    meta = {
        "config": cfg.to_dict(),
        "versions": {"dpnet": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "kernel_backend": kernels.BACKEND},
        "seeds": {"master": cfg.seed, "signal": cfg.seed, "noise": cfg.seed, "graph": cfg.seed,
                  "streams": "Philox keyed by (seed, purpose, replicate)"},
        "graph": {"n": scn.n, "m": scn.topology.edge_count, "beta_star": float(A.beta_star), "weights": A.rule,
                  "non_mixing": bool(A.non_mixing), "components": scn.topology.component_count(), **scn.graph_stats},
        "sensitivity": {"kind": scn.sensitivity.kind,
                        "global": None if math.isinf(scn.sensitivity.delta_global) else scn.sensitivity.delta_global,
                        "delta": scn.sensitivity.delta, "guarantee": scn.sensitivity.guarantee,
                        "smooth_scale": "2 S*(s) / eps" if scn.sensitivity.kind == "smooth" else None},
        "signal_model": {"family": scn.model.family, "params": list(scn.model.params)},
        "runs": runs,
    }
    if scn.dataset is not None:
        mu, sd = scn.dataset.log_moments()
        meta["data"] = {"households": scn.dataset.household_count, "days": scn.dataset.day_count,
                        "retained": scn.dataset.retained, "dropped": scn.dataset.dropped,
                        "log_mean": mu, "log_sd": sd}
    online_only = all(a not in MVUE_FAMILY for a in cfg.algorithms if a != "rizk_baseline")
    if "rizk_baseline" in cfg.algorithms and online_only:
        meta["notes"] = ["rizk_baseline does not support online learning; it is run on the MVUE task only"]
    return meta


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1) -> dict:
    """Run every (regime, algorithm, eps) cell and write trace.jsonl, summary.csv and metadata.json."""
    scn = Scenario(cfg)
    out_dir = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.out)
    rows, runs, traces = [], [], []
    for alg, regime, eps in _jobs(cfg):
        tr = run_one(scn, alg, regime if regime != "none" else "signal_dp", eps or 1.0, workers=workers)
        if regime == "none":
            tr.regime, tr.epsilon = "none", None
        bound = metrics.bound_report(tr)
        rows.append(tr.summary_row(bound))
        runs.append({k: v for k, v in tr.metadata.items() if k not in ("seeds",)})
        traces.append(tr)

    def write(tmp: Path) -> dict:
        first = True
        for tr in traces:
            tr.to_jsonl(tmp / "trace.jsonl", append=not first)
            first = False
        metrics.write_summary_csv(rows, tmp / "summary.csv")
        with open(tmp / "metadata.json", "w") as fh:
            json.dump(_metadata(scn, runs), fh, indent=2, sort_keys=True, default=_jsonable)
        return {"trace": "trace.jsonl", "summary": "summary.csv", "metadata": "metadata.json"}

    paths = _atomic_outputs(out_dir, write)
    paths["rows"] = rows
    return paths


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def compare_baseline(cfg: ExperimentConfig, out_dir: str | Path | None = None, ours: str = "mvue_dp",
                     workers: int = 1) -> list[dict]:
    """Paired MSE of our MVUE algorithm and the first-order baseline over the eps grid."""
    if ours not in MVUE_FAMILY or ours == "rizk_baseline":
        raise ConfigError("the baseline comparison is defined for the MVUE task")
    if cfg.budget_mode != "homogeneous":
        raise ConfigError("the baseline comparison uses equal per-agent budgets")
    scn = Scenario(cfg)
    rows = []
    for regime in cfg.regimes:
        for eps in cfg.epsilons:
            a = run_one(scn, ours, regime, eps, workers=workers)
            b = run_one(scn, "rizk_baseline", regime, eps, workers=workers)
            ma, mb = float(a.mean("mse")[-1]), float(b.mean("mse")[-1])
            rows.append({
                "regime": regime,
                "epsilon": eps,
                "ours_MSE": ma,
                "ours_MSE_se": float(a.se("mse")[-1]),
                "baseline_MSE": mb,
                "baseline_MSE_se": float(b.se("mse")[-1]),
                "ratio": mb / ma if ma > 0 else math.inf,
            })
    if out_dir is not None:
        def write(tmp: Path) -> dict:
            with open(tmp / "comparison.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
                w.writeheader()
                w.writerows(rows)
            return {"comparison": "comparison.csv"}

        _atomic_outputs(Path(out_dir), write)
    return rows


def allocate_for_config(cfg: ExperimentConfig, out_dir: str | Path, eps: float | None = None) -> budget.BudgetAllocation:
    """Allocation for explicit sensitivities, or for the scenario's round-0 signals (replicate 0)."""
    eps = eps or cfg.epsilons[0]
    weights = None
    if cfg.sensitivities is not None:
        d = np.asarray(cfg.sensitivities, dtype=float)
        if cfg.budget_mode == "heterogeneous_decentralized":
            raise ConfigError("decentralized allocation needs a graph; omit explicit sensitivities")
    else:
        scn = Scenario(cfg)
        s0 = scn.initial_signals(range(1))[:, 0]
        d = np.asarray(privacy.effective_sensitivity(scn.sensitivity, s0, eps), dtype=float)
        if "network_dp" in cfg.regimes:
            d = np.maximum(d, scn.matrix.max_neighbor_weight)
        weights = scn.matrix.dense
    prob = budget.BudgetProblem(d, eps, cfg.cap_factor * eps,
                                weights if cfg.budget_mode == "heterogeneous_decentralized" else None)
    if cfg.budget_mode == "heterogeneous_decentralized":
        alloc = budget.allocate_decentralized(prob)
    else:
        alloc = budget.allocate_closed_form(prob)

    def write(tmp: Path) -> dict:
        budget.allocation_to_csv(alloc, prob, tmp / "allocation.csv")
        return {"allocation": "allocation.csv"}

    _atomic_outputs(Path(out_dir), write)
    return alloc
