from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpda.engines import Engine, RunConfig, RunContext, ScheduleMode, run
from dpda.graphs import GraphSequence, GraphSnapshot, generate_small_world, laplacian
from dpda.metrics import (ReplicationError, average_traces, check_bounds, conic_penalty,
                          consensus_distance, consensus_violation, edge_disagreement, infeasibility,
                          relative_error, run_replications, stacked_objective, suboptimality,
                          theorem_bound_static, theta_initial)
from dpda.problem import (AgentObjective, ConicConstraint, ProblemInstance, generate_classo,
                          isotonic_matrix, solve_centralized)
from dpda.prox import ConeKind, project_cone
from dpda.scenarios import BUILTINS, build_problem, run_one
from dpda.schedule import default_constants, init_static


def test_relative_error_examples():
    xs = np.array([1.0, -2.0])
    assert relative_error(np.tile(xs, (3, 1)), xs) == 0.0
    assert relative_error(np.array([2 * xs, xs, xs]), xs) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        relative_error(np.ones((2, 2)), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_relative_error_brute_force(seed):
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal(4)
    xs = x_star + rng.standard_normal((6, 4))
    brute = max(np.sqrt(sum((a - b) ** 2 for a, b in zip(x, x_star))) for x in xs)
    assert relative_error(xs, x_star) == pytest.approx(brute / np.sqrt(np.sum(x_star ** 2)), rel=1e-12)


def test_infeasibility_examples():
    con = ConicConstraint(isotonic_matrix(4), np.zeros(3))
    assert infeasibility(np.array([[0.0, 1.0, 2.0, 3.0]]), [con]) == 0.0
    assert infeasibility(np.array([[0.0, 2.0, 1.0, 3.0]]), [con]) == pytest.approx(1.0)
    assert infeasibility(np.array([[0.0, 1.0, 2.0, 3.0], [0.0, 2.0, 1.0, 3.0]]), [con, con]) == pytest.approx(1.0)


def test_infeasibility_general_cone():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    b = rng.standard_normal(3)
    con = ConicConstraint(A, b, ConeKind.SECOND_ORDER)
    for _ in range(20):
        x = rng.standard_normal(3) * 3
        r = A @ x - b
        ref = np.linalg.norm(r - project_cone(con.cone, r))
        assert infeasibility(x[None, :], [con]) == pytest.approx(ref, abs=1e-12)


def test_consensus_measures():
    xs = np.array([[1.0, 0.0], [3.0, 0.0]])
    assert consensus_violation(xs) == pytest.approx(1.0)
    assert consensus_distance(xs) == pytest.approx(np.sqrt(2.0))
    assert consensus_violation(np.ones((4, 2))) == 0.0


@pytest.fixture(scope="module")
def instance():
    p = generate_classo(6, 8, 5, 0.02, 1e-3, 4)
    g = generate_small_world(5, 7, 4)
    return p, g, solve_centralized(p, 1e-11)


def test_suboptimality_at_consensual_optimum(instance):
    p, g, oracle = instance
    xs = np.tile(oracle.x_star, (5, 1))
    assert suboptimality(xs, p, oracle, alpha=3.0, graph=g) <= 1e-12 * abs(p.phi(oracle.x_star))
    assert suboptimality(xs, p, oracle, alpha=3.0, tv=True) <= 1e-12 * abs(p.phi(oracle.x_star))


def test_suboptimality_single_agent_plain_gap():
    f = AgentObjective(np.eye(2), np.array([1.0, 1.0]), lasso_weight=0.1)
    p = ProblemInstance((f,), (ConicConstraint.unconstrained(2),))
    oracle = solve_centralized(p, 1e-12)
    x = np.array([[0.3, -0.4]])
    assert suboptimality(x, p, oracle) == pytest.approx(abs(f.value(x[0]) - f.value(oracle.x_star)), rel=1e-12)


def test_stacked_objective_dense_laplacian(instance):
    p, g, _ = instance
    rng = np.random.default_rng(1)
    W = laplacian(g)
    for _ in range(10):
        xs = rng.uniform(-2, 2, (5, 6))
        alpha = rng.uniform(0, 5)
        dense = sum(0.5 * np.sum((f.C @ x - f.d) ** 2) + f.lasso_weight * np.abs(x).sum()
                    for f, x in zip(p.objectives, xs))
        dense += 0.5 * alpha * np.sum(xs * (W @ xs))
        assert stacked_objective(xs, p, alpha, g) == pytest.approx(dense, rel=1e-12)
        assert edge_disagreement(xs, g) ** 2 == pytest.approx(np.sum(xs * (W @ xs)), rel=1e-12)


def test_theta_initial_trivial_case():
    f = AgentObjective(np.eye(2), np.array([1.0, 2.0]))
    p = ProblemInstance((f,) * 2, (ConicConstraint.unconstrained(2),) * 2)
    g = GraphSnapshot.undirected(2, [(0, 1)])
    oracle = solve_centralized(p, 1e-12)
    const = default_constants(p, g)
    s0 = init_static(const, g)
    ctx = RunContext(Engine.DPDA, const, s0, np.tile(oracle.x_star, (2, 1)), True, None, g, 2,
                     ScheduleMode.ACCELERATED)
    assert theta_initial(ctx, p, oracle) == pytest.approx(1 / (2 * s0.gamma), rel=1e-12)


def test_bound_refuses_nonzero_dual_start(instance):
    p, g, oracle = instance
    tr = run(RunConfig(iterations=3), p, g, oracle)
    ctx = replace(tr.context, theta0_zero=False)
    with pytest.raises(ValueError):
        theorem_bound_static(tr.checkpoints[3], ctx, p, oracle)


def test_bound_after_one_step(instance):
    p, g, oracle = instance
    tr = run(RunConfig(iterations=1, x0="gaussian", init_seed=2), p, g, oracle)
    (chk,) = check_bounds(tr, p, oracle)
    assert chk.upper_ok and chk.iterate_ok and chk.lower_ok


def test_bounds_and_trace_invariants(instance):
    p, g, oracle = instance
    tr = run(RunConfig(iterations=4000, record_at=(1, 10, 100, 1000, 2000, 4000)), p, g, oracle)
    for chk in check_bounds(tr, p, oracle):
        assert chk.upper_ok and chk.iterate_ok and chk.lower_ok, chk
    for name in ("relative_error_last", "relative_error_ergodic", "infeasibility", "consensus_violation"):
        assert np.all(tr.column(name) >= 0)
    assert np.all(np.diff(tr.column("N_K")) > 0)
    rhs = {r["k"]: r["theorem_bound"] for r in tr.rows}
    for K in (1000, 2000):
        assert 0.2 <= rhs[2 * K] / rhs[K] <= 0.35
    nk = tr.column("N_K")
    assert nk[-1] / 4000 ** 2 == pytest.approx(nk[-2] / 2000 ** 2, rel=0.1)


def test_tv_bound_needs_diagnostics(instance):
    p, g, oracle = instance
    seq = GraphSequence(g, 5, 0.8, 0, "tv_undirected")
    tr = run(RunConfig(engine="dpda_tv", iterations=5), p, seq, oracle)
    with pytest.raises(ValueError):
        check_bounds(tr, p, oracle)
    tr = run(RunConfig(engine="dpda_tv", iterations=50, mixing="exact",
                       record_at=(1, 10, 50)), p, seq, oracle)
    for chk in check_bounds(tr, p, oracle):
        assert chk.accumulation == 0.0
        assert chk.upper_ok and chk.iterate_ok and chk.lower_ok


def test_tv_bound_with_measured_accumulation(instance):
    p, g, oracle = instance
    seq = GraphSequence(g, 5, 0.8, 0, "tv_undirected")
    tr = run(RunConfig(engine="dpda_tv", iterations=300, diagnostics=True, record_at=(10, 100, 300)),
             p, seq, oracle)
    checks = check_bounds(tr, p, oracle)
    assert checks[-1].accumulation > 0
    assert all(c.upper_ok and c.iterate_ok and c.lower_ok for c in checks)


def test_conic_penalty_zero_when_feasible(instance):
    p, _, oracle = instance
    xs = np.tile(oracle.x_star, (5, 1))
    assert conic_penalty(xs, p.constraints, oracle.theta_star) <= 1e-9


def _small(name, **kw):
    return replace(BUILTINS[name], n=5, m_obs=6, num_agents=5, num_edges=7, iterations=60,
                   replications=4, **kw)


def test_single_replication_equals_single_run():
    sc = _small("static-10-45")
    avg, results = run_replications(sc, replications=1)
    single = run_one(sc, avg.seeds[0])
    for name in ("suboptimality", "relative_error_last"):
        assert np.array_equal(avg.mean[name], single.trace.column(name))


def test_average_permutation_invariant():
    sc = _small("static-10-45")
    _, results = run_replications(sc)
    traces = [r.trace for r in results]
    a = average_traces(traces)
    b = average_traces(traces[::-1])
    c = average_traces([traces[i] for i in (2, 0, 3, 1)])
    for name in a.mean:
        assert np.array_equal(a.mean[name], b.mean[name])
        assert np.array_equal(a.mean[name], c.mean[name])
        assert np.all(a.lo[name] <= a.mean[name] + 1e-15) and np.all(a.mean[name] <= a.hi[name] + 1e-15)
    with pytest.raises(ValueError):
        average_traces([])


def test_replication_failure_names_seed():
    sc = _small("static-10-45", oracle_tol=1e-300)
    with pytest.raises(ReplicationError) as info:
        run_replications(sc, replications=2)
    assert info.value.index == 0
    problem, _, _ = build_problem(sc, info.value.seed)
    assert problem.num_agents == 5
