import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpnet import budget as B, graph as G
from dpnet.errors import NotConverged, NotConvergedWarning

cp = pytest.importorskip("cvxpy")


def cvx_reference(problem, neighbourhood=False):
    n = problem.n
    x = cp.Variable(n)
    d = problem.sensitivities
    cons = [x >= 1e-9]
    caps = problem.caps
    if np.isfinite(caps).any():
        idx = np.flatnonzero(np.isfinite(caps))
        cons.append(x[idx] <= caps[idx])
    if neighbourhood:
        cons.append(problem.weights @ x <= problem.average_budget)
    else:
        cons.append(cp.sum(x) <= problem.total)
    prob = cp.Problem(cp.Minimize(d @ cp.inv_pos(x)), cons)
    prob.solve()
    return float(prob.value), np.asarray(x.value)


def random_problem(rng, n=None, caps=False, weights=False):
    n = n or int(rng.integers(2, 51))
    d = rng.lognormal(0, 1, n)
    eb = float(rng.uniform(0.1, 10))
    c = rng.uniform(0.3, 3, n) * eb if caps else None
    w = None
    if weights:
        edges = [(i, i + 1) for i in range(n - 1)] + [(i, j) for i in range(n) for j in range(i + 2, n)
                                                      if rng.random() < 3 / n]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # n = 2 paths are periodic; irrelevant to the budget constraint
            w = G.mh_weights(G.Topology.from_edges(n, edges))
    return B.BudgetProblem(d, eb, c, w)


class TestClosedForm:
    def test_two_agents(self):
        p = B.BudgetProblem([1.0, 4.0], 1.0)
        a = B.allocate_closed_form(p)
        np.testing.assert_allclose(a.epsilon, [2 / 3, 4 / 3])
        assert a.objective == pytest.approx(4.5)
        assert p.homogeneous_objective() == pytest.approx(5.0)
        r = B.improvement_ratio(a, p)
        assert r == pytest.approx(0.9)
        lo, hi = B.ratio_bracket(p)
        assert lo == 0.25 and lo <= r <= hi

    def test_equal_sensitivities(self):
        p = B.BudgetProblem(np.full(7, 2.5), 0.8)
        a = B.allocate_closed_form(p)
        np.testing.assert_allclose(a.epsilon, 0.8)
        assert B.improvement_ratio(a, p) == pytest.approx(1.0)

    def test_caps_below_budget(self):
        caps = np.array([0.2, 0.5, 0.9])
        a = B.allocate_closed_form(B.BudgetProblem([1.0, 2.0, 3.0], 1.0, caps))
        np.testing.assert_array_equal(a.epsilon, caps)
        assert a.saturated.all()

    def test_water_fill_beats_printed_formula(self):
        # the first agent saturates; the formula leaves its excess unspent
        p = B.BudgetProblem([9.0, 1.0, 1.0], 1.0, caps=[1.0, 10.0, 10.0])
        a = B.allocate_closed_form(p)
        np.testing.assert_allclose(a.epsilon, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(a.extra["formula_epsilon"], [1.0, 0.6, 0.6])
        assert a.extra["formula_gap"] > 0
        assert B.allocate_formula(p).feasible()

    def test_feasible_and_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = random_problem(rng, caps=bool(rng.integers(2)))
            a = B.allocate_closed_form(p)
            assert a.feasible() and np.all(a.epsilon > 0) and np.all(a.epsilon <= p.caps)

    def test_matches_reference_and_cvx(self):
        rng = np.random.default_rng(1)
        for k in range(100):
            p = random_problem(rng, caps=k % 2 == 1)
            cf = B.allocate_closed_form(p)
            pg = B.allocate_projected_gradient(p)
            assert cf.objective <= pg.objective + 1e-6
            if k % 2 == 0:
                assert abs(cf.objective - pg.objective) <= 1e-6 * max(1.0, cf.objective)
            if k < 15:
                val, _ = cvx_reference(p)
                assert cf.objective <= val * (1 + 1e-6)

    def test_ratio_bracket_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = random_problem(rng)
            r = B.improvement_ratio(B.allocate_closed_form(p), p)
            lo, hi = B.ratio_bracket(p)
            assert lo - 1e-12 <= r <= hi + 1e-12

    @given(st.lists(st.floats(0.01, 100), min_size=2, max_size=12), st.integers(0, 11), st.floats(1.01, 10))
    def test_monotone(self, d, i, factor):
        i %= len(d)
        p = B.BudgetProblem(d, 1.0)
        bigger = np.array(d)
        bigger[i] *= factor
        a = B.allocate_closed_form(p).epsilon
        b = B.allocate_closed_form(B.BudgetProblem(bigger, 1.0)).epsilon
        assert b[i] >= a[i] - 1e-12
        others = np.arange(len(d)) != i
        assert np.all(b[others] <= a[others] + 1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            B.BudgetProblem([1.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            B.BudgetProblem([1.0], -1.0)
        with pytest.raises(ValueError):
            B.BudgetProblem([1.0, 2.0], 1.0, weights=np.array([[1.0, 0.5], [0.0, 0.5]]))


class TestDecentralized:
    def test_single_agent(self):
        p = B.BudgetProblem([3.0], 2.0, caps=[1.5], weights=np.ones((1, 1)))
        assert B.allocate_decentralized(p).epsilon[0] == pytest.approx(1.5)
        p = B.BudgetProblem([3.0], 2.0, weights=np.ones((1, 1)))
        assert B.allocate_decentralized(p).epsilon[0] == pytest.approx(2.0, rel=1e-6)

    def test_complete_graph_matches_closed_form(self):
        rng = np.random.default_rng(3)
        d = rng.lognormal(0, 1, 15)
        p = B.BudgetProblem(d, 1.5, weights=G.uniform_complete(15))
        a = B.allocate_decentralized(p)
        cf = B.allocate_closed_form(p)
        assert a.converged and a.feasible()
        assert a.objective == pytest.approx(cf.objective, rel=1e-5)
        np.testing.assert_allclose(a.epsilon, cf.epsilon, rtol=1e-2)

    def test_path_example(self):
        p = B.BudgetProblem([1.0, 1.0, 4.0], 1.0, weights=G.mh_weights(G.path_graph(3)))
        a = B.allocate_decentralized(p)
        val, _ = cvx_reference(p, neighbourhood=True)
        assert a.feasible()
        assert a.objective <= p.homogeneous_objective() + 1e-9
        assert a.objective == pytest.approx(val, rel=1e-4)

    def test_against_references(self):
        rng = np.random.default_rng(4)
        for k in range(12):
            p = random_problem(rng, n=int(rng.integers(2, 51)), caps=k % 3 == 0, weights=True)
            a = B.allocate_decentralized(p)
            sl = B.allocate_neighbourhood_reference(p)
            ref = min(sl.objective, cvx_reference(p, neighbourhood=True)[0])
            assert a.feasible(neighbourhood=True) and a.converged
            assert abs(a.objective - ref) <= 1e-4 * ref
            assert p.residuals(a.epsilon)["global"] <= 1e-8 * p.total

    @given(st.integers(2, 20), st.integers(0, 10_000))
    def test_local_implies_global(self, n, seed):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, n=n, weights=True)
        eps = rng.uniform(0.01, 2, n) * p.average_budget
        local = p.weights @ eps
        np.testing.assert_allclose(local.sum(), eps.sum(), rtol=1e-12)
        if np.all(local <= p.average_budget):
            assert eps.sum() <= p.total * (1 + 1e-12)

    def test_not_converged(self):
        rng = np.random.default_rng(5)
        p = random_problem(rng, n=30, weights=True)
        with pytest.warns(NotConvergedWarning):
            a = B.allocate_decentralized(p, max_iters=2)
        assert not a.converged and a.feasible(neighbourhood=True)
        with pytest.raises(NotConverged):
            B.allocate_decentralized(p, max_iters=2, strict=True)
        with pytest.raises(ValueError):
            B.allocate_decentralized(p, step_size=0)


def test_csv_export(tmp_path):
    p = B.BudgetProblem([1.0, 4.0, 9.0], 1.0, caps=[10.0, 10.0, 1.2])
    a = B.allocate_closed_form(p)
    B.allocation_to_csv(a, p, tmp_path / "a.csv")
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["agent", "delta", "epsilon", "cap", "saturated"]
    assert [r["saturated"] for r in rows] == ["False", "False", "True"]
    np.testing.assert_allclose([float(r["epsilon"]) for r in rows], a.epsilon, rtol=1e-15)
