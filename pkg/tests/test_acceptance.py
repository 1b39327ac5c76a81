"""Acceptance criteria, one test each; a PASS/FAIL/SKIP line per criterion is
printed in the terminal summary (or directly when run as a script)."""

import math
import os
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from dpnet import budget as B, estimators as E, graph as G, metrics as M, privacy as P, signals as S
from dpnet.harness.config import config_from_dict
from dpnet.harness.experiment import Scenario, run_one

pytestmark = pytest.mark.acceptance

RESULTS: dict[int, str] = {}


def report(num, ok, detail, elapsed=None, limit=None):
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.1f}s" + (f" / limit {limit:g}s]" if limit else "]")
    RESULTS[num] = f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}{timing}"
    print(RESULTS[num])
    return ok


def german_style(**over):
    raw = {"scenario": "synthetic", "graph": {"kind": "geometric", "n": 100, "radius": 0.3},
           "signal": {"family": "lognormal", "mu": 1.67, "sigma": 1.04}, "horizon": 100, "replicates": 200,
           "seed": 0, "delta": 0.01}
    raw.update(over)
    return config_from_dict(raw)


def test_1_dp_guarantee():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, failures = 0.0, 0
    for _ in range(1000):
        regime = ("signal_dp", "network_dp")[rng.integers(2)]
        task = ("mvue", "online")[rng.integers(2)]
        eps = float(10 ** rng.uniform(-2, 2))
        a = float(rng.uniform(0, 0.999))
        if rng.random() < 0.5:
            spec = S.SensitivitySpec("global", delta_global=float(10 ** rng.uniform(-3, 3)))
            sig = None
        else:
            spec = S.sensitivity_spec(S.lognormal_known_var(1.67, 1.04), delta=float(10 ** rng.uniform(-6, -1)))
            sig = float(rng.lognormal(1.67, 1.04))
        plan = P.NoisePlan(regime, task, spec, eps)
        b = float(plan.scales(np.array([sig if sig is not None else 1.0]), np.array([a]))[0])
        hidden = [P.effective_sensitivity(spec, sig if sig is not None else 0.0, eps)]
        if regime == "network_dp" and a > 0:
            hidden.append(a)
        for d in hidden:
            chk = P.dp_density_ratio_check(b, float(d), eps)
            worst = max(worst, chk.max_ratio - eps)
            failures += not (chk.passed and chk.max_ratio <= eps + 1e-12)
    el = time.perf_counter() - t0
    ok = failures == 0 and el < 1.0
    report(1, ok, f"{failures} failing cases of 1000, max(ratio - eps) = {worst:.2e}", el, 1)
    assert ok


def test_2_mvue_rate_and_bound():
    t0 = time.perf_counter()
    A = G.mh_weights(G.path_graph(3))
    assert A.beta_star == pytest.approx(0.5)
    s = E.EstimatorState.start(np.array([1.0, 2.0, 3.0]))
    e0 = np.abs(s.nu - 2).max()
    cs = []
    for t in range(1, 41):
        s = E.mvue_step(s, A)
        err = np.abs(s.nu - 2).max()
        if err > 1e-15:
            cs.append(t + math.log2(err / e0))  # err = (1/2)^(t - c) e0
    c = max(cs)
    rate_ok = c <= 2.0
    model = S.lognormal_known_var(1.67, 1.04)
    spec = S.sensitivity_spec(model)
    lines = []
    bound_ok = True
    for name, mat in (("path n=3", A), ("geometric n=100", Scenario(german_style()).matrix)):
        for regime in ("signal_dp", "network_dp"):
            plan = P.NoisePlan(regime, "mvue", spec, 1.0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                tr = E.run(E.RunConfig("mvue_dp", 40, plan, replicates=500), mat, model)
            rep = M.bound_report(tr)
            bound_ok &= bool(np.all(rep.values >= tr.mean("te") - 3 * tr.se("te")))
            lines.append(f"{name}/{regime} min(bound - TE) = {np.min(rep.values - tr.mean('te')):.3g}")
    el = time.perf_counter() - t0
    ok = rate_ok and bound_ok and el < 10
    report(2, ok, f"contraction offset c = {c:.3f}; " + "; ".join(lines), el, 10)
    assert ok


def _expected_slope(A: G.MixingMatrix, t):
    # zero-mean i.i.d. inputs: E|nu_t - mu|^2 proportional to (1/t^2) sum_tau sum_i lambda_i^(2 tau)
    lam2 = np.square(A.spectrum.eigenvalues)
    powers = np.cumsum(np.power.outer(lam2, np.arange(t.max())).sum(axis=0))
    curve = np.sqrt(powers[t - 1]) / t
    return M.loglog_slope(t, curve)


def test_3_online_rate():
    t0 = time.perf_counter()
    cfg = german_style(horizon=1000, epsilons=[10.0])
    scn = Scenario(cfg)
    tr = run_one(scn, "online_signal_dp", "signal_dp", 10.0)
    t = np.arange(10, 1001)
    slope = M.loglog_slope(t, tr.mean("te")[t])
    oracle = _expected_slope(scn.matrix, t)
    el = time.perf_counter() - t0
    ok = -0.6 <= slope <= -0.4 and el < 120
    report(3, ok, f"slope {slope:.3f} (target -0.5 +/- 0.1); spectral expectation for this graph "
                  f"{oracle:.3f}, beta* = {scn.matrix.beta_star:.3f}", el, 120)
    assert ok


def test_4_complete_graph_tightness():
    t0 = time.perf_counter()
    spec = S.SensitivitySpec("global", delta_global=1.0)
    model = S.gaussian_known_var(0.0, 1.0)
    c = {}
    for n in (250, 1000):
        A = G.uniform_complete(n)
        for eps in (0.5, 1.0, 2.0):
            plan = P.NoisePlan("signal_dp", "mvue", spec, eps)
            tr = E.run(E.RunConfig("mvue_dp", 3, plan, replicates=2000), A, model)
            te = tr.mean("te")
            assert np.allclose(te[1:], te[1], rtol=1e-9)  # nothing changes after one step
            c[(n, eps)] = te[1] * eps
    vals = np.array(list(c.values()))
    by_eps = max(max(c[(n, e)] for e in (0.5, 1, 2)) / min(c[(n, e)] for e in (0.5, 1, 2)) for n in (250, 1000))
    by_n = max(max(c[(250, e)], c[(1000, e)]) / min(c[(250, e)], c[(1000, e)]) for e in (0.5, 1, 2))
    el = time.perf_counter() - t0
    ok = by_eps <= 1.1 and by_n <= 1.1 and el < 60
    report(4, ok, f"TE*eps in [{vals.min():.4f}, {vals.max():.4f}] (Laplace mean-noise value "
                  f"{2 / math.sqrt(math.pi):.4f}); spread over eps {by_eps:.3f}, over n {by_n:.3f}", el, 60)
    assert ok


def test_5_baseline():
    t0 = time.perf_counter()
    scn = Scenario(german_style(epsilons=[1.0, 10.0]))
    cells, ok = [], True
    for regime in ("signal_dp", "network_dp"):
        for eps in (1.0, 10.0):
            ours = float(run_one(scn, "mvue_dp", regime, eps).mean("mse")[-1])
            base = float(run_one(scn, "rizk_baseline", regime, eps).mean("mse")[-1])
            ok &= base >= 10 * ours
            cells.append(f"{regime} eps={eps:g}: {base / ours:.3g}x")
    el = time.perf_counter() - t0
    ok = ok and el < 120
    report(5, ok, "baseline/ours MSE " + ", ".join(cells) + " (need >= 10x)", el, 120)
    assert ok


def test_6_budget():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    gap_inactive, bracket_bad, dec_bad, dec_gap = 0.0, 0, 0, 0.0
    worst_closed = -math.inf
    for k in range(100):
        n = int(rng.integers(2, 51))
        d = rng.lognormal(0, 1, n)
        eb = float(rng.uniform(0.1, 10))
        capped = k % 2 == 1
        caps = rng.uniform(0.3, 3, n) * eb if capped else None
        edges = [(i, i + 1) for i in range(n - 1)] + [(i, j) for i in range(n) for j in range(i + 2, n)
                                                      if rng.random() < 3 / n]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            W = G.mh_weights(G.Topology.from_edges(n, edges))
        prob = B.BudgetProblem(d, eb, caps, W)
        cf = B.allocate_closed_form(prob)
        pg = B.allocate_projected_gradient(prob)
        worst_closed = max(worst_closed, cf.objective - pg.objective)
        if not capped:
            gap_inactive = max(gap_inactive, abs(cf.objective - pg.objective))
            lo, hi = B.ratio_bracket(prob)
            r = B.improvement_ratio(cf, prob)
            bracket_bad += not (lo - 1e-12 <= r <= hi + 1e-12)
        dec = B.allocate_decentralized(prob)
        ref = B.allocate_neighbourhood_reference(prob).objective
        rel = abs(dec.objective - ref) / ref
        dec_gap = max(dec_gap, rel)
        dec_bad += not (dec.feasible(neighbourhood=True) and rel <= 1e-4)
    el = time.perf_counter() - t0
    ok = gap_inactive <= 1e-6 and worst_closed <= 1e-6 and bracket_bad == 0 and dec_bad == 0 and el < 30
    report(6, ok, f"closed-vs-PG gap (caps off) {gap_inactive:.2e}, max closed - PG {worst_closed:.2e}; "
                  f"bracket violations {bracket_bad}; decentralized failures {dec_bad}, max rel gap {dec_gap:.2e}",
           el, 30)
    assert ok


def test_7_unrolled_and_product():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    unrolled_err = 0.0
    viol = {"mh": [], "modified_mh": []}
    for k in range(40):
        n = int(rng.integers(2, 11))
        edges = [(i, i + 1) for i in range(n - 1)] + [(i, j) for i in range(n) for j in range(i + 2, n)
                                                      if rng.random() < 0.4]
        rule = ("mh", "modified_mh")[k % 2]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            A = G.build_weights(G.Topology.from_edges(n, edges), rule)
        T = int(rng.integers(1, 101))
        xs = [rng.standard_normal(n) + rng.laplace(size=n) for _ in range(T)]
        sig = E.EstimatorState.start(rng.standard_normal(n))
        net = E.EstimatorState.start(np.zeros(n))
        for x in xs:
            sig = E.online_signal_dp_step(sig, A, x)
            net = E.online_network_dp_step(net, A, x)
        unrolled_err = max(unrolled_err, np.abs(sig.nu - E.unrolled_online_signal(A.dense, xs)).max(),
                           np.abs(net.nu - E.unrolled_online_network(A.dense, xs)).max())
        lam, Q = A.spectrum.eigenvalues, A.spectrum.eigenvectors
        for t in range(1, 101):
            phi = np.diag(Q.T @ E.network_product(A.dense, t) @ Q)
            bad = phi > float(t) ** (lam - 2) + 1e-8
            if bad.any():
                viol[rule].append((t, float(lam[bad].min())))
    el = time.perf_counter() - t0
    mh_t = sorted({t for t, _ in viol["mh"]})
    ok = unrolled_err <= 1e-8 and not viol["mh"] and not viol["modified_mh"] and el < 10
    detail = (f"unrolled max error {unrolled_err:.1e}; product bound violations: lazy weights "
              f"{len(viol['modified_mh'])}, MH weights {len(viol['mh'])}")
    if viol["mh"]:
        detail += (f" at t in {mh_t}, all with lambda_i(A) <= {max(l for _, l in viol['mh']):.3f} "
                   "(negative factors at tau = 1, 2)")
    report(7, ok, detail, el, 10)
    assert ok


def test_8_heterogeneous():
    t0 = time.perf_counter()
    cells, ok = [], True
    for regime in ("signal_dp", "network_dp"):
        hom_scn = Scenario(german_style())
        het_scn = Scenario(german_style(budget={"mode": "heterogeneous_closed", "cap_factor": 10.0}))
        for eps in (0.1, 1.0, 10.0):
            hom = run_one(hom_scn, "mvue_dp", regime, eps).mse[-1]
            het = run_one(het_scn, "mvue_dp", regime, eps).mse[-1]
            p = stats.ttest_rel(hom, het, alternative="greater").pvalue
            good = het.mean() <= hom.mean() and p < 0.05
            ok &= bool(good)
            cells.append(f"{regime} eps={eps:g}: {hom.mean() / het.mean():.2f}x, p={p:.1e}")
    el = time.perf_counter() - t0
    report(8, ok, "homogeneous/heterogeneous MSE " + "; ".join(cells), el)
    assert ok


def test_9_ingestion():
    gem, grid = os.environ.get("DPNET_GEM_PATH"), os.environ.get("DPNET_GRID_PATH")
    have_gem = bool(gem) and os.path.isfile(gem)
    have_grid = bool(grid) and os.path.isfile(grid)
    if not (have_gem or have_grid):
        RESULTS[9] = ("criterion 9: SKIP - set DPNET_GEM_PATH (cumulative meter CSV) and/or "
                      "DPNET_GRID_PATH (power-grid edge list) to run the real-data ingest checks")
        pytest.skip(RESULTS[9])
    from dpnet.harness.ingest import ingest_consumption

    parts, ok = [], True
    if have_gem:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ds = ingest_consumption(gem)
        mu, sd = ds.log_moments()
        good = ds.household_count == 969 and ds.day_count == 1096 and abs(mu - 1.67) <= 0.05 and abs(sd - 1.04) <= 0.05
        ok &= good
        parts.append(f"GEM n={ds.household_count} T={ds.day_count} mean={mu:.3f} sd={sd:.3f}")
    if have_grid:
        top = G.load_edge_list(grid)
        good = top.node_count == 4941 and top.edge_count == 6594
        ok &= good
        parts.append(f"grid n={top.node_count} m={top.edge_count}")
    if not (have_gem and have_grid):
        parts.append("one file absent, its check skipped")
    report(9, ok, "; ".join(parts))
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
