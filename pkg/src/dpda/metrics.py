"""Error metrics, rate-bound checks and replicated experiments."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .graphs import laplacian
from .mixing import exact_average
from .prox import cone_distance


def _stack_rows(xs):
    return np.atleast_2d(np.asarray(xs, dtype=float))


def relative_error(xs, x_star) -> float:
    x_star = np.asarray(x_star, dtype=float)
    nrm = float(np.linalg.norm(x_star))
    if nrm == 0:
        raise ValueError("relative error is undefined for a zero reference point")
    return float(np.max(np.linalg.norm(_stack_rows(xs) - x_star, axis=1))) / nrm


def infeasibility(xs, constraints) -> float:
    xs = _stack_rows(xs)
    worst = 0.0
    for x, con in zip(xs, constraints):
        if con.m:
            worst = max(worst, float(cone_distance(con.cone, con.A @ x - con.b)))
    return worst


def consensus_violation(xs) -> float:
    xs = _stack_rows(xs)
    return float(np.max(np.linalg.norm(xs - xs.mean(axis=0), axis=1)))


def consensus_distance(xs) -> float:
    """``d_C(x)``: distance of the stacked vector to the consensus subspace."""
    xs = _stack_rows(xs)
    return float(np.linalg.norm(xs - exact_average(xs)))


def edge_disagreement(xs, graph) -> float:
    """``||M x||``, summing squared differences over edges."""
    xs = _stack_rows(xs)
    e = graph.edge_array
    if e.size == 0:
        return 0.0
    return float(np.linalg.norm(xs[e[:, 0]] - xs[e[:, 1]]))


def conic_penalty(xs, constraints, theta_star) -> float:
    """``sum_i ||theta*_i|| d_K(A_i x_i - b_i)``."""
    xs = _stack_rows(xs)
    total = 0.0
    for x, con, th in zip(xs, constraints, theta_star):
        if con.m:
            total += float(np.linalg.norm(th)) * float(cone_distance(con.cone, con.A @ x - con.b))
    return total


def stacked_objective(xs, problem, alpha=0.0, graph=None, tv=False) -> float:
    """Local objectives plus the consensus penalty used by the engine.

    Static: ``alpha/2 * sum_edges ||x_i - x_j||^2``. Time-varying:
    ``alpha/2 * d_C(x)^2``.
    """
    xs = _stack_rows(xs)
    val = sum(f.value(x) for f, x in zip(problem.objectives, xs))
    if alpha > 0:
        if tv:
            val += 0.5 * alpha * consensus_distance(xs) ** 2
        else:
            val += 0.5 * alpha * edge_disagreement(xs, graph) ** 2
    return float(val)


def suboptimality(x_bar, problem, oracle, alpha=0.0, graph=None, tv=False, signed=False) -> float:
    gap = stacked_objective(x_bar, problem, alpha, graph, tv) - problem.phi(oracle.x_star)
    return float(gap) if signed else abs(float(gap))


def theta_initial(ctx, problem, oracle) -> float:
    """``1/(2 gamma0) + sum_i ||x_i^0 - x*||^2/(2 tau0) + 2 ||theta*_i||^2 / kappa_i^0``."""
    s0 = ctx.state0
    dist2 = float(np.sum((ctx.x0 - oracle.x_star) ** 2))
    dual = sum(2.0 * float(th @ th) / k for th, k in zip(oracle.theta_star, s0.kappa) if th.size)
    return 1.0 / (2.0 * s0.gamma) + dist2 / (2.0 * s0.tau) + dual


@dataclass(frozen=True)
class BoundCheck:
    k: int
    lhs: float
    rhs: float
    gap_signed: float
    lower_value: float
    iterate_lhs: float
    iterate_rhs: float
    eps_oracle: float
    accumulation: float = 0.0

    @property
    def upper_ok(self):
        return self.lhs <= self.rhs + self.eps_oracle

    @property
    def iterate_ok(self):
        return self.iterate_lhs <= self.iterate_rhs + self.eps_oracle

    @property
    def lower_ok(self):
        return self.lower_value >= -self.eps_oracle

    def to_dict(self):
        d = asdict(self)
        d.update(upper_ok=self.upper_ok, iterate_ok=self.iterate_ok, lower_ok=self.lower_ok)
        return d


def theorem_bound_static(checkpoint, ctx, problem, oracle) -> BoundCheck:
    """Ergodic objective/feasibility bound and last-iterate distance bound."""
    if not ctx.theta0_zero:
        raise ValueError("the bound assumes the dual iterates start at zero")
    if checkpoint.state.N_K_accum <= 0:
        raise ValueError("bound is defined from the first iteration on")
    alpha = ctx.constants.alpha
    g = ctx.graph
    xb = checkpoint.x_bar
    gap = suboptimality(xb, problem, oracle, alpha, g, signed=True)
    conic = conic_penalty(xb, problem.constraints, oracle.theta_star)
    lhs = max(abs(gap), edge_disagreement(xb, g) + conic)
    theta0 = theta_initial(ctx, problem, oracle)
    s = checkpoint.state
    rhs = theta0 / s.N_K_accum
    it_lhs = float(np.sum((checkpoint.x - oracle.x_star) ** 2))
    it_rhs = (s.tau_tilde / s.gamma) * 2.0 * ctx.state0.gamma * theta0
    return BoundCheck(checkpoint.k, lhs, rhs, gap, gap + conic, it_lhs, it_rhs, oracle.eps_oracle)


def theorem_bound_tv(checkpoint, ctx, problem, oracle) -> BoundCheck:
    """Time-varying counterpart, as ``N_K * lhs <= Theta_1 + measured accumulation``.

    ``rhs`` is reported per unit ``N_K`` so it compares directly with ``lhs``.
    """
    if not ctx.theta0_zero:
        raise ValueError("the bound assumes the dual iterates start at zero")
    if checkpoint.state.N_K_accum <= 0:
        raise ValueError("bound is defined from the first iteration on")
    alpha = ctx.constants.alpha
    xb = checkpoint.x_bar
    gap = suboptimality(xb, problem, oracle, alpha, tv=True, signed=True)
    conic = conic_penalty(xb, problem.constraints, oracle.theta_star)
    lhs = max(abs(gap), consensus_distance(xb) + conic)
    theta1 = theta_initial(ctx, problem, oracle)
    s = checkpoint.state
    rhs = (theta1 + checkpoint.accumulation) / s.N_K_accum
    it_lhs = float(np.sum((checkpoint.x - oracle.x_star) ** 2))
    it_rhs = (s.tau_tilde / s.gamma) * 2.0 * ctx.state0.gamma * (theta1 + checkpoint.accumulation)
    return BoundCheck(checkpoint.k, lhs, rhs, gap, gap + conic, it_lhs, it_rhs, oracle.eps_oracle,
                      checkpoint.accumulation)


def check_bounds(trace, problem, oracle):
    """Bound checks at every recorded iteration past the first."""
    from .engines import Engine
    ctx = trace.context
    tv = ctx.engine is Engine.DPDA_TV
    if tv and not trace.metadata.get("diagnostics") and trace.metadata.get("mixing") != "exact":
        raise ValueError("time-varying bound check needs the diagnostic oracle (diagnostics=True)")
    fn = theorem_bound_tv if tv else theorem_bound_static
    return [fn(cp, ctx, problem, oracle) for k, cp in sorted(trace.checkpoints.items()) if k > 0]


def trace_row(cp, ctx, problem, oracle) -> dict:
    from .engines import Engine
    tv = ctx.engine is Engine.DPDA_TV
    alpha = ctx.constants.alpha
    s = cp.state
    if s.N_K_accum > 0:
        bound = (theta_initial(ctx, problem, oracle) + cp.accumulation) / s.N_K_accum
    else:
        bound = math.inf
    return {
        "k": cp.k,
        "t_k": cp.t_k,
        "suboptimality": suboptimality(cp.x_bar, problem, oracle, alpha, ctx.graph, tv),
        "infeasibility": infeasibility(cp.x_bar, problem.constraints),
        "consensus_violation": consensus_violation(cp.x),
        "relative_error_last": relative_error(cp.x, oracle.x_star),
        "relative_error_ergodic": relative_error(cp.x_bar, oracle.x_star),
        "theorem_bound": float(bound),
        "N_K": s.N_K_accum,
    }


# ---------------------------------------------------------------------------
# replications


METRIC_NAMES = ("suboptimality", "infeasibility", "consensus_violation",
                "relative_error_last", "relative_error_ergodic", "theorem_bound", "t_k", "N_K")


@dataclass
class AveragedTrace:
    k: np.ndarray
    mean: dict
    lo: dict
    hi: dict
    replications: int
    seeds: tuple

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "k", "mean", "min", "max"])
        for name in self.mean:
            for j, k in enumerate(self.k):
                w.writerow([name, int(k), repr(float(self.mean[name][j])),
                            repr(float(self.lo[name][j])), repr(float(self.hi[name][j]))])
        return buf.getvalue()


def average_traces(traces, seeds=()) -> AveragedTrace:
    if not traces:
        raise ValueError("need at least one trace")
    ks = [tuple(r["k"] for r in t.rows) for t in traces]
    if any(k != ks[0] for k in ks):
        raise ValueError("traces were recorded at different iterations")
    mean, lo, hi = {}, {}, {}
    for name in METRIC_NAMES:
        vals = np.array([t.column(name) for t in traces])
        # math.fsum keeps the mean independent of replication order
        mean[name] = np.array([math.fsum(col) / len(col) for col in vals.T])
        lo[name] = vals.min(axis=0)
        hi[name] = vals.max(axis=0)
    return AveragedTrace(np.array(ks[0]), mean, lo, hi, len(traces), tuple(seeds))


class ReplicationError(RuntimeError):
    def __init__(self, index, seed, cause):
        super().__init__(f"replication {index} (seed {seed}) failed: {cause}")
        self.index, self.seed = index, seed


def run_replications(scenario, replications=None, master_seed=None, jobs=1, schedule_mode=None,
                     check_bounds_too=False, oracle_cache=None):
    """Independent seeded replications of ``scenario``.

    Returns ``(AveragedTrace, per-replication results)``; each result holds
    the trace and, optionally, its bound checks.
    """
    from .scenarios import run_one, replication_seeds

    reps = scenario.replications if replications is None else replications
    if reps < 1:
        raise ValueError("replications must be at least 1")
    seeds = replication_seeds(scenario, reps, master_seed)
    jobs_args = [(scenario, i, s, schedule_mode, check_bounds_too, oracle_cache)
                 for i, s in enumerate(seeds)]
    if jobs > 1 and reps > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one_safe, jobs_args))
    else:
        results = [_run_one_safe(a) for a in jobs_args]
    return average_traces([r.trace for r in results], seeds), results


def _run_one_safe(args):
    from .scenarios import run_one
    scenario, i, seed, mode, bounds, cache = args
    try:
        return run_one(scenario, seed, schedule_mode=mode, check_bounds_too=bounds, oracle_cache=cache)
    except Exception as exc:  # re-raised with the failing seed attached
        raise ReplicationError(i, seed, exc) from exc
