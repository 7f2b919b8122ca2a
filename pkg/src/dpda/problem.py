"""Agent-local composite objectives, isotonic C-LASSO instances and the
centralized reference solver."""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .prox import ConeKind, ConeTag, cone_distance, polar_sign_bounds, project_cone, project_polar, prox_l1_box


def spectral_norm(A, rtol=1e-10, max_iters=10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    The start vector is deterministic (all ones plus a fixed ramp) so results
    do not depend on any global RNG state.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        return 0.0
    n = A.shape[1]
    v = np.ones(n) + np.linspace(0.0, 0.5, n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # unlucky start in the null space, restart on a basis vector
            v = np.zeros(n)
            v[int(np.argmax(np.abs(A).sum(axis=0)))] = 1.0
            continue
        v = w / nw
        if abs(nw - est) <= rtol * nw:
            est = nw
            break
        est = nw
    return float(np.sqrt(est))


@dataclass(frozen=True, eq=False)
class AgentObjective:
    """``f(x) = 0.5 ||C x - d||^2`` plus ``lasso_weight ||x||_1`` on an optional box."""

    C: np.ndarray
    d: np.ndarray
    lasso_weight: float = 0.0
    domain_box: float | None = None

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if C.shape[0] != d.shape[0]:
            raise ValueError(f"C has {C.shape[0]} rows but d has {d.shape[0]} entries")
        if self.lasso_weight < 0:
            raise ValueError("lasso_weight must be nonnegative")
        if self.domain_box is not None and not self.domain_box > 0:
            raise ValueError("domain_box must be positive")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "lasso_weight", float(self.lasso_weight))

    @property
    def n(self):
        return self.C.shape[1]

    @functools.cached_property
    def singular_values(self):
        return np.linalg.svd(self.C, compute_uv=False)

    @property
    def L(self):
        s = self.singular_values
        return float(s[0] ** 2) if s.size else 0.0

    @property
    def mu(self):
        s = self.singular_values
        if s.size < self.n:
            return 0.0
        return float(s[-1] ** 2)

    def f(self, x):
        r = self.C @ x - self.d
        return 0.5 * float(r @ r)

    def rho(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain_box is not None and np.max(np.abs(x), initial=0.0) > self.domain_box * (1 + 1e-12):
            return np.inf
        return self.lasso_weight * float(np.abs(x).sum())

    def value(self, x):
        return self.f(x) + self.rho(x)


def local_gradient(agent: AgentObjective, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (agent.n,):
        raise ValueError(f"expected x of shape ({agent.n},), got {x.shape}")
    return agent.C.T @ (agent.C @ x - agent.d)


@dataclass(frozen=True, eq=False)
class ConicConstraint:
    """``A x - b`` must lie in the cone named by ``cone_kind``."""

    A: np.ndarray
    b: np.ndarray
    cone_kind: ConeKind = ConeKind.NONPOSITIVE_ORTHANT

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cone_kind", ConeKind(self.cone_kind))

    @classmethod
    def unconstrained(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0), ConeKind.ZERO)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def cone(self):
        return ConeTag(self.cone_kind, self.m)

    @functools.cached_property
    def norm_A(self):
        return spectral_norm(self.A)

    def residual(self, x):
        return self.A @ x - self.b

    def violation(self, x):
        return float(cone_distance(self.cone, self.residual(x)))


def isotonic_matrix(n) -> np.ndarray:
    A = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    A[idx, idx] = 1.0
    A[idx, idx + 1] = -1.0
    return A


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    objectives: tuple
    constraints: tuple
    seed: int | None = None
    planted_x_star: np.ndarray | None = None

    def __post_init__(self):
        objectives = tuple(self.objectives)
        constraints = tuple(self.constraints)
        object.__setattr__(self, "objectives", objectives)
        object.__setattr__(self, "constraints", constraints)
        if not objectives or len(objectives) != len(constraints):
            raise ValueError("need one constraint per agent and at least one agent")
        n = objectives[0].n
        for f, c in zip(objectives, constraints):
            if f.n != n or c.A.shape[1] != n:
                raise ValueError("all agents must share the dimension n")
        if not self.bar_mu > 0:
            raise ValueError(
                f"sum of the smooth terms is not strongly convex (lambda_min = {self.bar_mu:.3e})")

    @property
    def agents(self):
        return tuple(zip(self.objectives, self.constraints))

    @property
    def n(self):
        return self.objectives[0].n

    @property
    def num_agents(self):
        return len(self.objectives)

    @functools.cached_property
    def L(self):
        return np.array([f.L for f in self.objectives])

    @functools.cached_property
    def mu(self):
        return np.array([f.mu for f in self.objectives])

    @property
    def L_max(self):
        return float(self.L.max())

    @property
    def ubar_mu(self):
        return float(self.mu.min())

    @functools.cached_property
    def bar_mu(self):
        return compute_bar_mu(self)

    @functools.cached_property
    def norm_A(self):
        return np.array([c.norm_A for c in self.constraints])

    @property
    def box(self):
        """Smallest box half-width over agents, ``inf`` when no agent has one."""
        boxes = [f.domain_box for f in self.objectives if f.domain_box is not None]
        return min(boxes) if boxes else np.inf

    def phi(self, x):
        """Centralized objective at a common point ``x``."""
        return sum(f.value(x) for f in self.objectives)

    def to_dict(self):
        agents = []
        for f, c in self.agents:
            agents.append({
                "C": f.C.tolist(), "d": f.d.tolist(), "lasso_weight": f.lasso_weight,
                "domain_box": f.domain_box, "A": c.A.tolist(), "b": c.b.tolist(),
                "cone_kind": c.cone_kind.value,
            })
        return {
            "n": self.n,
            "agents": agents,
            "metadata": {"L_max": self.L_max, "ubar_mu": self.ubar_mu, "bar_mu": self.bar_mu},
            "seed": self.seed,
            "planted_x_star": None if self.planted_x_star is None else self.planted_x_star.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        objs, cons = [], []
        n = int(d["n"])
        for a in d["agents"]:
            objs.append(AgentObjective(np.array(a["C"], dtype=float).reshape(-1, n), np.array(a["d"]),
                                       a["lasso_weight"], a.get("domain_box")))
            cons.append(ConicConstraint(np.array(a["A"], dtype=float).reshape(-1, n),
                                        np.array(a["b"]), a["cone_kind"]))
        planted = d.get("planted_x_star")
        return cls(tuple(objs), tuple(cons), d.get("seed"),
                   None if planted is None else np.array(planted))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def compute_bar_mu(instance: ProblemInstance) -> float:
    H = sum(f.C.T @ f.C for f in instance.objectives)
    return float(np.linalg.eigvalsh(H)[0])


def _planted_vector(n, rng):
    k = n // 4
    x = np.zeros(n)
    x[:k] = np.sort(rng.uniform(-10.0, 0.0, k))
    if k:
        x[n - k:] = np.sort(rng.uniform(0.0, 10.0, k))
    return x


def generate_classo(n, m_obs, num_agents, lasso_weight, noise_std, seed, box=20.0) -> ProblemInstance:
    """Isotonic constrained LASSO with per-agent ``lasso_weight``.

    Each ``C_i`` is a Gaussian matrix whose singular values are replaced by a
    descending-sorted uniform sample of ``[1, 3]``.
    """
    if n < 2:
        raise ValueError("n must be at least 2 for the isotonic rows to exist")
    if m_obs < 1 or num_agents < 1:
        raise ValueError("m_obs and num_agents must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    x_planted = _planted_vector(n, rng)
    A = isotonic_matrix(n)
    objs, cons = [], []
    for _ in range(num_agents):
        G = rng.standard_normal((m_obs, n))
        U, s, Vt = np.linalg.svd(G, full_matrices=False)
        s_new = np.sort(rng.uniform(1.0, 3.0, s.size))[::-1]
        C = (U * s_new) @ Vt
        eps = noise_std * rng.standard_normal(n)
        objs.append(AgentObjective(C, C @ (x_planted + eps), lasso_weight, box))
        cons.append(ConicConstraint(A, np.zeros(n - 1), ConeKind.NONPOSITIVE_ORTHANT))
    return ProblemInstance(tuple(objs), tuple(cons), seed, x_planted)


# ---------------------------------------------------------------------------
# centralized oracle


class NotConverged(RuntimeError):
    """Raised when the reference solver misses its tolerance; carries the best iterate."""

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True, eq=False)
class OracleSolution:
    x_star: np.ndarray
    theta_star: tuple
    gap: float
    iterations_used: int
    kkt_residual: float
    converged: bool = True

    @property
    def theta_norm(self):
        return float(np.sqrt(sum(float(t @ t) for t in self.theta_star)))

    @property
    def eps_oracle(self):
        return 10.0 * self.kkt_residual * (1.0 + self.theta_norm)

    def to_dict(self):
        return {"x_star": self.x_star.tolist(), "theta_star": [t.tolist() for t in self.theta_star],
                "gap": float(self.gap), "iterations_used": int(self.iterations_used),
                "kkt_residual": float(self.kkt_residual), "converged": bool(self.converged)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["x_star"]), tuple(np.array(t) for t in d["theta_star"]),
                   d["gap"], d["iterations_used"], d["kkt_residual"], d["converged"])


@dataclass
class _Stacked:
    """Centralized data with duplicate agent constraints merged."""

    H: np.ndarray
    c: np.ndarray
    lam: float
    box: float
    A: np.ndarray
    b: np.ndarray
    tags: list
    slices: list
    groups: list          # agent indices per merged constraint block
    H_norm: float = field(init=False)
    H_min: float = field(init=False)
    A_norm: float = field(init=False)

    def __post_init__(self):
        eig = np.linalg.eigvalsh(self.H)
        self.H_norm, self.H_min = float(eig[-1]), float(eig[0])
        self.A_norm = spectral_norm(self.A)


def _stack(instance: ProblemInstance) -> _Stacked:
    H = sum(f.C.T @ f.C for f in instance.objectives)
    c = sum(f.C.T @ f.d for f in instance.objectives)
    lam = sum(f.lasso_weight for f in instance.objectives)
    groups, reps = [], []
    for i, con in enumerate(instance.constraints):
        for g, rep in zip(groups, reps):
            if (rep.cone_kind == con.cone_kind and rep.A.shape == con.A.shape
                    and np.array_equal(rep.A, con.A) and np.array_equal(rep.b, con.b)):
                g.append(i)
                break
        else:
            groups.append([i])
            reps.append(con)
    A = np.vstack([r.A for r in reps]) if reps else np.zeros((0, instance.n))
    b = np.concatenate([r.b for r in reps]) if reps else np.zeros(0)
    slices, tags, start = [], [], 0
    for r in reps:
        slices.append(slice(start, start + r.m))
        tags.append(r.cone)
        start += r.m
    return _Stacked(H, c, lam, instance.box, A, b, tags, slices, groups)


def _project_blocks(data, v, polar):
    out = np.empty_like(v)
    fn = project_polar if polar else project_cone
    for sl, tag in zip(data.slices, data.tags):
        out[sl] = fn(tag, v[sl])
    return out


def _kkt(data: _Stacked, x, theta):
    """Infinity-norm KKT residual and a duality-gap upper bound."""
    g = data.H @ x - data.c + data.A.T @ theta
    lam, box = data.lam, data.box
    # distance of -g to the subdifferential of lam*|x_j| + box indicator
    r = np.empty_like(x)
    at_up = x >= box
    at_lo = x <= -box
    zero = x == 0
    mid = ~(at_up | at_lo | zero)
    r[mid] = g[mid] + lam * np.sign(x[mid])
    r[zero] = np.maximum(np.abs(g[zero]) - lam, 0.0)
    r[at_up] = np.maximum(g[at_up] + lam, 0.0)
    r[at_lo] = np.minimum(g[at_lo] - lam, 0.0)
    res = data.A @ x - data.b
    primal = res - _project_blocks(data, res, polar=False)
    dual = theta - _project_blocks(data, theta, polar=True)
    comp = abs(float(theta @ res))
    parts = [np.abs(r).max(initial=0.0), np.abs(primal).max(initial=0.0),
             np.abs(dual).max(initial=0.0), comp]
    # the Lagrangian is bar_mu-strongly convex in x, so its minimum is at
    # least L(x, theta) - ||r||^2 / (2 bar_mu)
    gap = max(0.0, -float(theta @ res)) + float(r @ r) / (2.0 * data.H_min)
    return max(parts), gap


def _polish(data: _Stacked, x_hat, theta_hat, eps):
    """Guess the active set from ``(x_hat, theta_hat)`` and solve it exactly."""
    n = x_hat.size
    box = data.box
    up = x_hat >= box - eps
    lo = x_hat <= -box + eps
    zero = (np.abs(x_hat) <= eps) & ~up & ~lo
    free = ~(up | lo | zero)
    x_fix = np.zeros(n)
    x_fix[up] = box
    x_fix[lo] = -box
    res = data.A @ x_hat - data.b
    active = np.zeros(data.b.size, dtype=bool)
    lower, upper = [], []
    for sl, tag in zip(data.slices, data.tags):
        kind = tag.kind
        if kind is ConeKind.ZERO:
            active[sl] = True
        elif kind is ConeKind.NONPOSITIVE_ORTHANT:
            active[sl] = (res[sl] >= -eps) | (theta_hat[sl] > eps)
        else:
            active[sl] = (res[sl] <= eps) | (theta_hat[sl] < -eps)
        lo_b, up_b = polar_sign_bounds(kind)
        lower.append(np.full(tag.dim, lo_b))
        upper.append(np.full(tag.dim, up_b))
    lower = np.concatenate(lower) if lower else np.zeros(0)
    upper = np.concatenate(upper) if upper else np.zeros(0)

    S = np.flatnonzero(free)
    Aa = data.A[active]
    sign = np.sign(x_hat[S])
    rhs_x = data.c[S] - data.lam * sign - data.H[np.ix_(S, ~free)] @ x_fix[~free]
    rhs_c = data.b[active] - Aa[:, ~free] @ x_fix[~free]
    K = np.block([[data.H[np.ix_(S, S)], Aa[:, S].T],
                  [Aa[:, S], np.zeros((Aa.shape[0], Aa.shape[0]))]])
    sol = np.linalg.lstsq(K, np.concatenate([rhs_x, rhs_c]), rcond=None)[0]
    x = x_fix.copy()
    x[S] = sol[:S.size]

    # multipliers: g + A_act^T theta + lam*u + box normal = 0
    g = data.H @ x - data.c
    cols, lb, ub = [Aa.T], [lower[active]], [upper[active]]
    rhs = -g.copy()
    rhs[S] -= data.lam * np.sign(x[S])
    Z = np.flatnonzero(zero)
    if Z.size:
        E = np.zeros((n, Z.size))
        E[Z, np.arange(Z.size)] = data.lam
        cols.append(E)
        lb.append(-np.ones(Z.size))
        ub.append(np.ones(Z.size))
    B = np.flatnonzero(up | lo)
    if B.size:
        E = np.zeros((n, B.size))
        E[B, np.arange(B.size)] = 1.0
        rhs[B] -= data.lam * np.sign(x[B])
        cols.append(E)
        lb.append(np.where(up[B], 0.0, -np.inf))
        ub.append(np.where(up[B], np.inf, 0.0))
    M = np.hstack(cols)
    theta = np.zeros(data.b.size)
    if M.shape[1]:
        fit = lsq_linear(M, rhs, bounds=(np.concatenate(lb), np.concatenate(ub)),
                         method="bvls", tol=1e-15, lsmr_tol=None)
        theta[active] = fit.x[:int(active.sum())]
    return x, theta


def _centralized_pda(data: _Stacked, x, theta, x_prev, sched, iters):
    """Accelerated primal-dual iterations on the merged problem."""
    tau, tau_t, eta, gamma, kappa_ratio, mu = sched
    for _ in range(iters):
        y = x + eta * (x - x_prev)
        theta = _project_blocks(data, theta + gamma * kappa_ratio * (data.A @ y - data.b), polar=True)
        grad = data.H @ x - data.c + data.A.T @ theta
        x_prev = x
        x = prox_l1_box(x - tau * grad, tau * data.lam, data.box if np.isfinite(data.box) else None)
        eta = 1.0 / np.sqrt(1.0 + mu * tau_t)
        tau_t = eta * tau_t
        tau = 1.0 / (1.0 / tau_t + mu)
        gamma = gamma / eta
    return x, theta, x_prev, (tau, tau_t, eta, gamma, kappa_ratio, mu)


def solve_centralized(instance: ProblemInstance, tol=1e-10, max_iters=200_000) -> OracleSolution:
    """Reference solution of the pooled problem with per-agent multipliers.

    Runs the single-machine accelerated primal-dual method and, for orthant
    and zero cones, periodically snaps to the exact solution of the active set
    it has identified. Stops once the KKT residual is below ``tol``.
    Duplicate agent constraints share one multiplier, split evenly.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    data = _stack(instance)
    n, m = instance.n, data.b.size
    polyhedral = all(t.kind is not ConeKind.SECOND_ORDER for t in data.tags)

    L = max(data.H_norm, 1e-12)
    mu = data.H_min
    delta2 = L
    tau0 = 1.0 / (L + delta2)
    tau_t0 = 1.0 / (1.0 / tau0 - mu)
    # single node: gamma only scales kappa, so fold it into kappa_ratio
    gamma0 = 1.0
    kappa_ratio = delta2 / data.A_norm ** 2 if data.A_norm > 0 else delta2
    sched = (tau0, tau_t0, 0.0, gamma0, kappa_ratio, mu)

    x = np.zeros(n)
    theta = np.zeros(m)
    x_prev = x
    best = (np.inf, np.inf, x, theta)
    done, chunk = 0, 100
    while done < max_iters:
        step = min(chunk, max_iters - done)
        x, theta, x_prev, sched = _centralized_pda(data, x, theta, x_prev, sched, step)
        done += step
        candidates = [(x, theta)]
        if polyhedral:
            for eps in (1e-3, 1e-5, 1e-7, 1e-9):
                candidates.append(_polish(data, x, theta, eps))
        for cx, ct in candidates:
            res, gap = _kkt(data, cx, ct)
            if res < best[0]:
                best = (res, gap, cx, ct)
        if best[0] < tol:
            break
        chunk = min(2 * chunk, 5_000)

    res, gap, xs, ts = best
    theta_star = []
    for i in range(instance.num_agents):
        for g, sl in zip(data.groups, data.slices):
            if i in g:
                theta_star.append(ts[sl] / len(g))
                break
    sol = OracleSolution(xs, tuple(theta_star), float(gap), int(done), float(res), bool(res < tol))
    if not sol.converged:
        raise NotConverged(f"KKT residual {res:.3e} above tolerance {tol:.1e} after {done} iterations", sol)
    return sol
