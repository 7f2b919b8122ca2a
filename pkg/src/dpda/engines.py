"""Iteration engines for static and time-varying networks.

Agent states are stacked into ``(N, n)`` / ``(N, m_max)`` arrays; row ``i``
only ever changes through quantities agent ``i`` owns or receives from its
current neighbors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import GraphSequence, GraphSnapshot, SequenceKind
from .mixing import MixingMode, MixingSession, approx_average, exact_average
from .prox import ConeKind, ConeTag, project_ball, project_polar, prox_l1_box
from .schedule import (ScheduleConstants, ScheduleState, advance, advance_constant,
                       default_constants, freeze, init_static, init_tv)


class Engine(str, enum.Enum):
    DPDA = "dpda"
    DPDA_TV = "dpda_tv"


class ScheduleMode(str, enum.Enum):
    ACCELERATED = "accelerated"
    CONSTANT = "constant"


class DivergenceError(FloatingPointError):
    def __init__(self, k, agent, field_name):
        super().__init__(f"non-finite {field_name} at iteration {k}, agent {agent}")
        self.k, self.agent, self.field = k, agent, field_name


@dataclass(frozen=True)
class QRule:
    """Communication rounds per iteration.

    ``log``: ``ceil(c * ln(k + 1))``. ``theorem``: ``ceil((5 + c) * log_{1/beta}(k + 1))``.
    Both are floored at one round, since the formulas give 0 at ``k = 0``.
    """

    kind: str = "log"
    c: float = 10.0
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("log", "theorem", "constant"):
            raise ValueError(f"unknown q rule {self.kind!r}")
        if self.kind == "theorem" and not (self.beta is not None and 0 < self.beta < 1):
            raise ValueError("theorem rule needs 0 < beta < 1")

    def q(self, k):
        if self.kind == "constant":
            return max(1, int(self.c))
        if self.kind == "log":
            raw = self.c * math.log(k + 1)
        else:
            raw = (5.0 + self.c) * math.log(k + 1) / math.log(1.0 / self.beta)
        # tolerate float noise right above an integer
        return max(1, math.ceil(raw - 1e-9))


def default_record_points(K):
    pts = {0, K}
    for e in range(0, 8):
        for m in (1, 2, 5):
            v = m * 10 ** e
            if v <= K:
                pts.add(v)
    return tuple(sorted(pts))


@dataclass(frozen=True)
class RunConfig:
    engine: Engine = Engine.DPDA
    schedule_mode: ScheduleMode = ScheduleMode.ACCELERATED
    iterations: int = 1000
    q_rule: QRule = QRule()
    mixing: MixingMode | None = None
    joint_rounds: bool = True
    x0: str = "zeros"
    init_seed: int = 0
    record_at: tuple | None = None
    diagnostics: bool = False
    delta1: float | None = None
    delta2: float | None = None
    alpha: float | None = None
    mu: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "engine", Engine(self.engine))
        object.__setattr__(self, "schedule_mode", ScheduleMode(self.schedule_mode))
        if self.mixing is not None:
            object.__setattr__(self, "mixing", MixingMode(self.mixing))
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.x0 not in ("zeros", "gaussian"):
            raise ValueError(f"unknown x0 rule {self.x0!r}")

    @property
    def record_points(self):
        if self.record_at is None:
            return default_record_points(self.iterations)
        return tuple(sorted({k for k in self.record_at if 0 <= k <= self.iterations} | {0}))


# ---------------------------------------------------------------------------
# stacked local data


@dataclass(frozen=True, eq=False)
class LocalData:
    Q: np.ndarray          # (N, n, n) C_i^T C_i
    c: np.ndarray          # (N, n) C_i^T d_i
    lasso: np.ndarray      # (N, 1)
    box: np.ndarray        # (N, 1), inf when unbounded
    A: np.ndarray          # (N, m_max, n), zero padded
    b: np.ndarray          # (N, m_max)
    m: np.ndarray          # (N,) true row counts
    cone_groups: tuple     # ((kind, m, agent index array), ...)

    @classmethod
    def from_problem(cls, problem):
        N, n = problem.num_agents, problem.n
        Q = np.stack([f.C.T @ f.C for f in problem.objectives])
        c = np.stack([f.C.T @ f.d for f in problem.objectives])
        lasso = np.array([[f.lasso_weight] for f in problem.objectives])
        box = np.array([[np.inf if f.domain_box is None else f.domain_box] for f in problem.objectives])
        m = np.array([con.m for con in problem.constraints])
        m_max = int(m.max(initial=0))
        A = np.zeros((N, m_max, n))
        b = np.zeros((N, m_max))
        groups = {}
        for i, con in enumerate(problem.constraints):
            A[i, :con.m] = con.A
            b[i, :con.m] = con.b
            groups.setdefault((con.cone_kind, con.m), []).append(i)
        cone_groups = tuple((kind, mm, np.array(idx)) for (kind, mm), idx in sorted(
            groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1])))
        return cls(Q, c, lasso, box, A, b, m, cone_groups)

    def grad(self, x):
        return np.einsum("inm,im->in", self.Q, x) - self.c

    def residual(self, x):
        return np.einsum("imn,in->im", self.A, x) - self.b

    def adjoint(self, theta):
        return np.einsum("imn,im->in", self.A, theta)

    def project_polar(self, theta):
        out = np.zeros_like(theta)
        for kind, mm, idx in self.cone_groups:
            if mm:
                out[idx, :mm] = project_polar(ConeTag(kind, mm), theta[idx, :mm])
        return out

    def prox(self, v, tau):
        box = None if np.all(np.isinf(self.box)) else self.box
        return prox_l1_box(v, tau * self.lasso, box)


# ---------------------------------------------------------------------------
# static engine


class StaticNetwork:
    """Neighbor exchange on a fixed undirected graph.

    ``message_log``, when a list, records ``(src, dst)`` arrays of every
    exchange so tests can confirm only graph edges carry data.
    """

    def __init__(self, graph: GraphSnapshot, message_log=None):
        if graph.directed:
            raise ValueError("static engine needs an undirected graph")
        self.graph = graph
        self.degrees = graph.degrees.astype(float)[:, None]
        e = graph.edge_array
        self.src = np.concatenate([e[:, 0], e[:, 1]])
        self.dst = np.concatenate([e[:, 1], e[:, 0]])
        adj = np.zeros((graph.num_nodes, graph.num_nodes))
        adj[self.dst, self.src] = 1.0
        self.adjacency = adj
        self.message_log = message_log

    def neighbor_sum(self, payload):
        """Row ``i`` is the sum of the payload rows of ``i``'s neighbors."""
        if self.message_log is not None:
            self.message_log.append((self.src, self.dst))
            out = np.zeros_like(payload)
            np.add.at(out, self.dst, payload[self.src])
            return out
        return self.adjacency @ payload

    def disagreement(self, payload):
        """``sum_{j in N_i} (p_i - p_j)`` for every ``i``."""
        return self.degrees * payload - self.neighbor_sum(payload)


@dataclass(frozen=True, eq=False)
class StaticState:
    x: np.ndarray
    x_prev: np.ndarray
    theta: np.ndarray
    s: np.ndarray


def dpda_step(state: StaticState, sched: ScheduleState, data: LocalData, net: StaticNetwork,
              alpha: float) -> StaticState:
    x, x_prev = state.x, state.x_prev
    y = x + sched.eta * (x - x_prev)
    theta = data.project_polar(state.theta + sched.kappa[:, None] * data.residual(y))
    s = state.s + sched.gamma * y
    # one round: each agent sends (s_i^{k+1}, x_i^k) to its neighbors
    n = x.shape[1]
    if alpha > 0:
        both = net.disagreement(np.hstack([s, x]))
        force = both[:, :n] + alpha * both[:, n:]
    else:
        force = net.disagreement(s)
    g = data.grad(x) + data.adjoint(theta) + force
    x_new = data.prox(x - sched.tau * g, sched.tau)
    return StaticState(x_new, x, theta, s)


# ---------------------------------------------------------------------------
# time-varying engine


@dataclass(frozen=True, eq=False)
class TvState:
    xi: np.ndarray
    xi_prev: np.ndarray
    theta: np.ndarray
    nu: np.ndarray
    omega: np.ndarray | None = None


@dataclass
class TvDiagnostics:
    """Approximation errors of one step, measured against exact averaging."""

    e1: float = 0.0
    e2: float = 0.0
    e3: float = 0.0


def _mix(session, payloads, q, joint):
    if len(payloads) == 1 or joint:
        widths = [p.shape[1] for p in payloads]
        out = approx_average(session, np.hstack(payloads), q)
        return np.split(out, np.cumsum(widths)[:-1], axis=1)
    return [approx_average(session, p, q) for p in payloads]


def dpda_tv_step(state: TvState, sched: ScheduleState, data: LocalData, session: MixingSession,
                 q: int, alpha: float, radius: float, joint=True, diagnostics: TvDiagnostics | None = None):
    xi, xi_prev = state.xi, state.xi_prev
    y = xi + sched.eta * (xi - xi_prev)
    theta = data.project_polar(state.theta + sched.kappa[:, None] * data.residual(y))
    omega = state.nu / sched.gamma + y
    if alpha > 0:
        r_omega, r_xi = _mix(session, [omega, xi], q, joint)
    else:
        (r_omega,) = _mix(session, [omega], q, joint)
        r_xi = None
    nu = sched.gamma * (omega - project_ball(r_omega, radius))
    base = xi - sched.tau * (data.grad(xi) + data.adjoint(theta) + nu)
    if alpha > 0:
        xi_new = data.prox(base - sched.tau * alpha * (xi - r_xi), sched.tau)
    else:
        xi_new = data.prox(base, sched.tau)
    if diagnostics is not None:
        exact_omega = project_ball(exact_average(omega), radius)
        diagnostics.e1 = float(np.linalg.norm(exact_omega - project_ball(r_omega, radius)))
        if alpha > 0:
            exact_xi = exact_average(xi)
            diagnostics.e2 = float(np.linalg.norm(exact_xi - r_xi))
            nu_exact = sched.gamma * (omega - exact_omega)
            x_exact = data.prox(xi - sched.tau * (data.grad(xi) + data.adjoint(theta) + nu_exact
                                                  + alpha * (xi - exact_xi)), sched.tau)
            diagnostics.e3 = float(np.linalg.norm(xi_new - x_exact))
        else:
            diagnostics.e2 = diagnostics.e3 = 0.0
    return TvState(xi_new, xi, theta, nu, omega)


# ---------------------------------------------------------------------------
# ergodic averages


class ErgodicAccumulator:
    """Running ``gamma``-weighted averages of the primal and dual iterates.

    Weights are ``gamma^{k-1} / gamma^0`` so ``N_K`` stays moderate.
    """

    def __init__(self, gamma0):
        if not gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        self.gamma0 = gamma0
        self.N_K = 0.0
        self.sum_x = None
        self.sum_theta = None

    def update(self, x_new, theta_new, gamma_prev):
        if not gamma_prev > 0:
            raise ValueError("gamma_prev must be positive")
        w = gamma_prev / self.gamma0
        if self.sum_x is None:
            self.sum_x = w * x_new
            self.sum_theta = w * theta_new
        else:
            self.sum_x = self.sum_x + w * x_new
            self.sum_theta = self.sum_theta + w * theta_new
        self.N_K += w
        return self

    @property
    def x_bar(self):
        return None if self.sum_x is None else self.sum_x / self.N_K

    @property
    def theta_bar(self):
        return None if self.sum_theta is None else self.sum_theta / self.N_K


def ergodic_update(acc: ErgodicAccumulator, x_new, theta_new, gamma_prev) -> ErgodicAccumulator:
    return acc.update(x_new, theta_new, gamma_prev)


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Everything the bound checks need at one recorded iteration."""

    k: int
    t_k: int
    x: np.ndarray
    x_bar: np.ndarray
    theta_bar: np.ndarray
    state: ScheduleState
    accumulation: float = 0.0
    nu: np.ndarray | None = None


@dataclass
class RunContext:
    """Quantities fixed at the start of a run."""

    engine: Engine
    constants: ScheduleConstants
    state0: ScheduleState
    x0: np.ndarray
    theta0_zero: bool
    radius: float | None
    graph: GraphSnapshot | None
    num_agents: int
    schedule_mode: ScheduleMode


@dataclass
class MetricTrace:
    rows: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    context: RunContext | None = None
    metadata: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    COLUMNS = ("k", "t_k", "suboptimality", "infeasibility", "consensus_violation",
               "relative_error_last", "relative_error_ergodic", "theorem_bound", "N_K")

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def row_at(self, k):
        for r in self.rows:
            if r["k"] == k:
                return r
        raise KeyError(k)

    def to_csv(self, header_lines=()) -> str:
        import csv
        import io
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r[c] if c in ("k", "t_k") else repr(float(r[c])) for c in self.COLUMNS])
        return buf.getvalue()


def ball_radius(problem):
    """``2 * Delta`` with ``Delta = 2 * box * sqrt(n)``, the domain diameter bound."""
    box = problem.box
    if not np.isfinite(box):
        raise ValueError("time-varying engine needs a bounded domain box")
    return 2.0 * (2.0 * box * math.sqrt(problem.n))


def _initial_x(config, problem):
    N, n = problem.num_agents, problem.n
    if config.x0 == "zeros":
        return np.zeros((N, n))
    rng = np.random.default_rng(config.init_seed)
    x = rng.standard_normal((N, n))
    box = problem.box
    return np.clip(x, -box, box) if np.isfinite(box) else x


def _check_finite(k, **arrays):
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise DivergenceError(k, int(bad[0]), name)


def run(config: RunConfig, problem, graphs, oracle) -> MetricTrace:
    """Run ``config.iterations`` iterations and record metrics.

    ``graphs`` is a ``GraphSnapshot`` for the static engine and a
    ``GraphSequence`` for the time-varying one.
    """
    from . import metrics

    data = LocalData.from_problem(problem)
    N, n = problem.num_agents, problem.n
    tv = config.engine is Engine.DPDA_TV
    if tv:
        if isinstance(graphs, GraphSnapshot):
            kind = SequenceKind.TV_DIRECTED if graphs.directed else SequenceKind.STATIC
            graphs = GraphSequence(graphs, kind=kind)
        graph = None
        constants = default_constants(problem, tv=True, delta1=config.delta1, delta2=config.delta2,
                                      alpha=config.alpha, mu=config.mu)
        sched = init_tv(constants)
        mode = config.mixing or (MixingMode.PUSH_SUM if graphs.directed else MixingMode.METROPOLIS)
        session = MixingSession(graphs, mode)
        radius = ball_radius(problem)
    else:
        graph = graphs.base if isinstance(graphs, GraphSequence) else graphs
        net = StaticNetwork(graph)
        constants = default_constants(problem, graph, delta1=config.delta1, delta2=config.delta2,
                                      alpha=config.alpha, mu=config.mu)
        sched = init_static(constants, graph)
        radius = None
    state0 = sched
    constant = config.schedule_mode is ScheduleMode.CONSTANT
    if constant:
        sched = freeze(sched)
    alpha = constants.alpha

    x0 = _initial_x(config, problem)
    m_max = data.A.shape[1]
    theta0 = np.zeros((N, m_max))
    if tv:
        state = TvState(x0, x0.copy(), theta0, np.zeros((N, n)))
    else:
        state = StaticState(x0, x0.copy(), theta0, np.zeros((N, n)))

    ctx = RunContext(config.engine, constants, state0, x0, True, radius, graph, N, config.schedule_mode)
    trace = MetricTrace(context=ctx)
    trace.metadata["diagnostics"] = bool(tv and config.diagnostics)
    trace.metadata["mixing"] = mode.value if tv else None
    acc = ErgodicAccumulator(state0.gamma)
    record = set(config.record_points)
    accumulation = 0.0
    diag = TvDiagnostics() if (tv and config.diagnostics) else None
    delta = radius / 2.0 if tv else None

    def checkpoint(k, x, t_k):
        x_bar = acc.x_bar if acc.x_bar is not None else x
        theta_bar = acc.theta_bar if acc.theta_bar is not None else theta0
        cp = Checkpoint(k, t_k, x.copy(), x_bar.copy(), theta_bar.copy(), sched, accumulation,
                        state.nu.copy() if tv else None)
        trace.checkpoints[k] = cp
        trace.rows.append(metrics.trace_row(cp, ctx, problem, oracle))

    t_k = 0
    if 0 in record:
        checkpoint(0, state.xi if tv else state.x, 0)
    for k in range(config.iterations):
        if tv:
            q = config.q_rule.q(k)
            state = dpda_tv_step(state, sched, data, session, q, alpha, radius,
                                 config.joint_rounds, diag)
            t_k = session.clock
            x_new = state.xi
            _check_finite(k, xi=state.xi, theta=state.theta, nu=state.nu)
            if diag is not None:
                nu_norm = float(np.linalg.norm(state.nu))
                e1_hat = diag.e1 * (4.0 * sched.gamma * math.sqrt(N) * delta + 1.0 + nu_norm)
                e2_hat = diag.e3 * (2.0 * math.sqrt(N) * delta / sched.tau + alpha * diag.e2)
                accumulation += (sched.gamma / state0.gamma) * (e1_hat + e2_hat)
                trace.diagnostics.append((k, q, diag.e1, diag.e2, diag.e3, accumulation))
        else:
            state = dpda_step(state, sched, data, net, alpha)
            t_k += 1
            x_new = state.x
            _check_finite(k, x=state.x, theta=state.theta, s=state.s)
        acc.update(x_new, state.theta, sched.gamma)
        sched = advance_constant(sched) if constant else advance(sched, constants.mu)
        if k + 1 in record:
            checkpoint(k + 1, x_new, t_k)
    trace.metadata["final_state"] = state
    return trace
