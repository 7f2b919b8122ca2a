"""Accelerated step-size schedules, strong-convexification moduli and
step-size condition checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class ScheduleConstants:
    """Fixed parameters of a run.

    ``degrees`` is only used by the static engine; pass ``None`` for the
    time-varying one.
    """

    delta1: float
    delta2: float
    alpha: float
    mu: float
    L: np.ndarray
    norm_A: np.ndarray
    degrees: np.ndarray | None = None
    ubar_mu: float | None = None
    mu_alpha: float | None = None

    def __post_init__(self):
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("delta1 and delta2 must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        object.__setattr__(self, "L", np.asarray(self.L, dtype=float))
        object.__setattr__(self, "norm_A", np.asarray(self.norm_A, dtype=float))
        if self.degrees is not None:
            object.__setattr__(self, "degrees", np.asarray(self.degrees, dtype=float))
        if self.ubar_mu is not None:
            if self.alpha == 0 and not self.ubar_mu > 0:
                raise ValueError("alpha = 0 needs every local smooth term to be strongly convex")
            cap = max(self.ubar_mu, self.mu_alpha if self.mu_alpha is not None else 0.0)
            if self.mu > cap * (1 + 1e-12):
                raise ValueError(f"mu = {self.mu:.4g} exceeds the admissible cap {cap:.4g}")

    @property
    def kappa_per_gamma(self):
        """``delta1 / ||A_i||^2``; agents with ``A_i = 0`` get ``delta1``."""
        nA2 = self.norm_A ** 2
        return np.where(nA2 > 0, self.delta1 / np.where(nA2 > 0, nA2, 1.0), self.delta1)


@dataclass(frozen=True)
class ScheduleState:
    tau: float
    tau_tilde: float
    eta: float
    gamma: float
    kappa_per_gamma: np.ndarray = field(repr=False)
    k: int = 0
    N_K_accum: float = 0.0
    gamma0: float = 0.0

    @property
    def kappa(self):
        return self.gamma * self.kappa_per_gamma


def _start(tau0, gamma0, constants):
    inv = 1.0 / tau0 - constants.mu
    if not inv > 0:
        raise ValueError(f"mu = {constants.mu:.4g} must be below 1/tau0 = {1.0 / tau0:.4g}")
    return ScheduleState(tau0, 1.0 / inv, 0.0, gamma0, constants.kappa_per_gamma, 0, 0.0, gamma0)


def init_static(constants: ScheduleConstants, graph) -> ScheduleState:
    if graph.directed:
        raise ValueError("static schedule needs an undirected graph")
    d = np.asarray(graph.degrees, dtype=float)
    if d.shape != constants.L.shape:
        raise ValueError("graph size does not match the number of agents")
    tau0 = float(np.min(1.0 / (constants.L + constants.delta2 + 2.0 * d * constants.alpha)))
    gamma0 = float(np.min(constants.delta2 / (2.0 * d + constants.delta1)))
    return _start(tau0, gamma0, constants)


def init_tv(constants: ScheduleConstants) -> ScheduleState:
    tau0 = float(np.min(1.0 / (constants.L + constants.delta2 + constants.alpha)))
    gamma0 = constants.delta2 / (1.0 + constants.delta1)
    return _start(tau0, gamma0, constants)


def advance(state: ScheduleState, mu: float) -> ScheduleState:
    eta = 1.0 / math.sqrt(1.0 + mu * state.tau_tilde)
    tau_tilde = eta * state.tau_tilde
    return replace(
        state,
        tau=1.0 / (1.0 / tau_tilde + mu),
        tau_tilde=tau_tilde,
        eta=eta,
        gamma=state.gamma / eta,
        k=state.k + 1,
        N_K_accum=state.N_K_accum + state.gamma / state.gamma0,
    )


def freeze(state: ScheduleState) -> ScheduleState:
    """Constant-step variant of ``state``: extrapolation weight 1, steps held."""
    return replace(state, eta=1.0)


def advance_constant(state: ScheduleState) -> ScheduleState:
    return replace(state, k=state.k + 1, N_K_accum=state.N_K_accum + state.gamma / state.gamma0)


def schedule_history(state0, mu, K, constant=False):
    states = [state0 if not constant else freeze(state0)]
    for _ in range(K):
        s = states[-1]
        states.append(advance_constant(s) if constant else advance(s, mu))
    return states


def schedule_csv(states) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "tau", "tau_tilde", "eta", "gamma", "N_K"])
    for s in states:
        w.writerow([s.k, repr(s.tau), repr(s.tau_tilde), repr(s.eta), repr(s.gamma), repr(s.N_K_accum)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# strong convexity after adding a consensus penalty


class MuAlpha(NamedTuple):
    mu_alpha: float
    alpha_min: float


def mu_alpha_static(bar_mu, N, L_bar, lambda2, alpha) -> MuAlpha:
    """Modulus of the penalized stacked objective on a static graph.

    ``L_bar`` is the root mean square of the local Lipschitz constants, and
    ``lambda2`` the smallest positive Laplacian eigenvalue.
    """
    if min(bar_mu, N, L_bar, lambda2) <= 0 or alpha < 0:
        raise ValueError("bar_mu, N, L_bar, lambda2 must be positive and alpha nonnegative")
    a = bar_mu / N
    c = alpha * lambda2
    # rationalized form of (a+c)/2 - sqrt(((a-c)/2)^2 + 4 L_bar^2) avoids
    # cancellation near the threshold
    s = math.sqrt(((a - c) / 2.0) ** 2 + 4.0 * L_bar ** 2)
    val = (a * c - 4.0 * L_bar ** 2) / ((a + c) / 2.0 + s)
    alpha_min = 4.0 * N * L_bar ** 2 / (lambda2 * bar_mu)
    assert (val > 0) == (alpha > alpha_min) or abs(val) <= 1e-12 * (a + c + L_bar)
    return MuAlpha(val, alpha_min)


def mu_alpha_tv(bar_mu, N, L_bar, alpha) -> MuAlpha:
    """As ``mu_alpha_static`` with the distance-to-consensus penalty (``lambda2 = 1``)."""
    return mu_alpha_static(bar_mu, N, L_bar, 1.0, alpha)


def default_constants(problem, graph=None, *, tv=False, delta1=None, delta2=None,
                      alpha=None, mu=None, alpha_margin=1.05) -> ScheduleConstants:
    """Constants used in the experiments unless overridden.

    Static: ``delta1 = d_max``, ``delta2 = 2 L_max``. Time-varying: both 1.
    ``alpha`` is 0 when every local term is strongly convex and otherwise
    ``alpha_margin`` times the threshold; ``mu`` is the largest admissible value.
    """
    from .graphs import laplacian, lambda2_weighted

    L = problem.L
    N = problem.num_agents
    L_bar = float(np.sqrt(np.mean(L ** 2)))
    degrees = None
    if tv:
        delta1 = 1.0 if delta1 is None else delta1
        delta2 = 1.0 if delta2 is None else delta2
        lam2 = 1.0
    else:
        degrees = graph.degrees.astype(float)
        delta1 = float(degrees.max()) if delta1 is None else delta1
        if delta1 == 0:
            delta1 = 1.0
        delta2 = 2.0 * problem.L_max if delta2 is None else delta2
        lam2 = lambda2_weighted(laplacian(graph)) if N > 1 else 1.0
    ubar_mu = problem.ubar_mu
    if alpha is None:
        if ubar_mu > 0:
            alpha = 0.0
        else:
            alpha = alpha_margin * 4.0 * N * L_bar ** 2 / (lam2 * problem.bar_mu)
    mu_a = mu_alpha_static(problem.bar_mu, N, L_bar, lam2, alpha).mu_alpha
    if mu is None:
        mu = max(ubar_mu, mu_a)
    return ScheduleConstants(delta1, delta2, alpha, mu, L, problem.norm_A, degrees, ubar_mu, mu_a)


# ---------------------------------------------------------------------------
# validators


CONDITIONS = ("a_dual_dominance", "b_primal_metric", "c_dual_metric", "d_momentum",
              "e_primal_dominance", "eta_range")


@dataclass
class ConditionReport:
    """Worst relative slack per condition; negative means violated."""

    worst: dict
    worst_k: dict
    tol: float = 1e-12

    @property
    def violations(self):
        return {c: v for c, v in self.worst.items() if v < -self.tol}

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"ok": self.ok, "tol": self.tol,
                "conditions": {c: {"worst_slack": self.worst[c], "at_k": self.worst_k[c]}
                               for c in self.worst}}


def _rel(lhs, rhs):
    """Row-wise worst relative slack ``(lhs - rhs) / scale``."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    out = (lhs - rhs) / scale
    return out.min(axis=-1) if out.ndim > 1 else out


def _eq(lhs, rhs):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    out = -np.abs(lhs - rhs) / scale
    return out.min(axis=-1) if out.ndim > 1 else out


def validate_conditions(history, constants: ScheduleConstants, mode="static", tol=1e-12) -> ConditionReport:
    """Check the scalar step-size conditions on consecutive recorded states.

    Slacks are relative, ``(lhs - rhs) / max(|lhs|, |rhs|)``. Equality
    conditions report ``-|lhs - rhs| / scale`` so any mismatch is negative.
    """
    if len(history) < 2:
        raise ValueError("need at least two recorded states")
    if mode not in ("static", "tv"):
        raise ValueError(f"unknown mode {mode!r}")
    c = constants
    nA2 = c.norm_A ** 2
    if mode == "static":
        if c.degrees is None:
            raise ValueError("static validation needs degrees")
        coupling = 2.0 * c.degrees * c.alpha
        width = 2.0 * c.degrees + c.delta1
    else:
        coupling = np.full_like(c.L, c.alpha)
        width = np.full_like(c.L, 1.0 + c.delta1)

    ks = np.array([s.k for s in history])
    tau = np.array([s.tau for s in history])
    eta = np.array([s.eta for s in history])
    gamma = np.array([s.gamma for s in history])
    kappa = np.array([s.kappa for s in history])
    # s = state k, t = state k+1
    g_s, g_t = gamma[:-1], gamma[1:]
    slack = {
        "a_dual_dominance": (_rel(c.delta1, kappa[:-1] * nA2 / g_s[:, None]), ks[:-1]),
        "b_primal_metric": (_rel(g_s / tau[:-1], g_t * (1.0 / tau[1:] - c.mu)), ks[:-1]),
        "c_dual_metric": (_eq(g_s[:, None] / kappa[:-1], g_t[:, None] / kappa[1:]), ks[:-1]),
        "d_momentum": (_eq(g_s, g_t * eta[1:]), ks[:-1]),
        "e_primal_dominance": (_rel(g_s[:, None] * (1.0 / tau[:-1, None] - c.L - coupling),
                                    (g_t * eta[1:] ** 2 * g_t)[:, None] * width), ks[:-1]),
        # eta lies in (0, 1]; 1 only for the frozen constant-step variant
        "eta_range": (np.minimum(eta[1:], 1.0 - eta[1:]), ks[1:]),
    }
    worst, worst_k = {}, {}
    for name in CONDITIONS:
        vals, at = slack[name]
        j = int(np.argmin(vals))
        worst[name] = float(vals[j])
        worst_k[name] = int(at[j])
    return ConditionReport(worst, worst_k, tol)
