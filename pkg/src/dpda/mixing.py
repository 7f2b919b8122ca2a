"""Consensus operators: exact averaging, Metropolis gossip and push-sum.

Stacked vectors are arrays of shape ``(N, n)``, one row per agent. Gossip
rounds are simulated as per-node message exchanges along the edges of the
current snapshot; dense matrices are built only by ``metropolis_matrix`` and
``directed_matrix`` for inspection and testing.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graphs import GraphSequence, GraphSnapshot


class MixingMode(str, enum.Enum):
    EXACT = "exact"
    METROPOLIS = "metropolis"
    PUSH_SUM = "push_sum"


def exact_average(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected a stacked (N, n) array, got shape {x.shape}")
    return np.broadcast_to(x.mean(axis=0), x.shape).copy()


def _metropolis_from_edges(N, e):
    deg = np.bincount(e.ravel(), minlength=N)
    w = 1.0 / (np.maximum(deg[e[:, 0]], deg[e[:, 1]]) + 1.0)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    w2 = np.concatenate([w, w])
    self_w = 1.0 - np.bincount(dst, weights=w2, minlength=N)
    nodes = np.arange(N)
    return (np.concatenate([nodes, src]), np.concatenate([nodes, dst]),
            np.concatenate([self_w, w2]))


def _directed_from_edges(N, e):
    deg = 1.0 + np.bincount(e[:, 0], minlength=N)
    nodes = np.arange(N)
    src = np.concatenate([nodes, e[:, 0]])
    dst = np.concatenate([nodes, e[:, 1]])
    # every sender splits its value evenly over its out-neighbors and itself
    return src, dst, 1.0 / deg[src]


def _metropolis_messages(g: GraphSnapshot):
    if g.directed:
        raise ValueError("Metropolis weights need an undirected graph")
    return _metropolis_from_edges(g.num_nodes, g.edge_array)


def _directed_messages(g: GraphSnapshot):
    if not g.directed:
        raise ValueError("push-sum weights need a directed graph")
    return _directed_from_edges(g.num_nodes, g.edge_array)


def _dense(N, messages):
    src, dst, w = messages
    V = np.zeros((N, N))
    # (dst, src) pairs are distinct, so plain fancy assignment is exact
    V[dst, src] = w
    return V


def metropolis_matrix(g: GraphSnapshot) -> np.ndarray:
    return _dense(g.num_nodes, _metropolis_messages(g))


def directed_matrix(g: GraphSnapshot) -> np.ndarray:
    return _dense(g.num_nodes, _directed_messages(g))


def _round(messages, payload, log=None, t=None):
    """One synchronous round: each node sums the weighted values it receives."""
    src, dst, w = messages
    out = np.zeros_like(payload)
    np.add.at(out, dst, w[:, None] * payload[src])
    if log is not None:
        log.append((t, src, dst))
    return out


def _block_matrices(sequence: GraphSequence, b):
    """Single-round matrices for every time of block ``b``.

    Round ``t`` only combines values along the edges up at time ``t`` (plus
    the self-loop); the matrices are assembled in one vectorized pass because
    that is far cheaper than per-snapshot construction for small N.
    """
    base = sequence.base
    N = base.num_nodes
    masks = sequence.block_masks(b).astype(float)
    e = base.edge_array
    T = masks.shape[0]
    V = np.zeros((T, N, N))
    if e.size == 0:
        V[:] = np.eye(N)
        return V
    e0, e1 = e[:, 0], e[:, 1]
    rows = np.arange(N)
    if base.directed:
        deg = 1.0 + np.stack([np.bincount(e0, weights=m, minlength=N) for m in masks])
        V[:, e1, e0] = masks / deg[:, e0]
        V[:, rows, rows] = 1.0 / deg
    else:
        deg = np.stack([np.bincount(e0, weights=m, minlength=N) + np.bincount(e1, weights=m, minlength=N)
                        for m in masks])
        w = masks / (np.maximum(deg[:, e0], deg[:, e1]) + 1.0)
        V[:, e0, e1] = w
        V[:, e1, e0] = w
        V[:, rows, rows] = 1.0 - V.sum(axis=2)
    return V


@dataclass
class MixingSession:
    """Stateful round counter over a graph sequence.

    ``message_log``, when a list, receives ``(t, src, dst)`` for every round so
    tests can check that only current edges carry messages.
    """

    sequence: GraphSequence
    mode: MixingMode = MixingMode.METROPOLIS
    clock: int = 0
    message_log: list | None = field(default=None, repr=False)
    _block: tuple = field(default=(-1, ()), init=False, repr=False)

    def __post_init__(self):
        self.mode = MixingMode(self.mode)
        if self.mode is MixingMode.METROPOLIS and self.sequence.directed:
            raise ValueError("Metropolis mixing on a directed sequence")
        if self.mode is MixingMode.PUSH_SUM and not self.sequence.directed:
            raise ValueError("push-sum mixing expects a directed sequence")

    @property
    def num_nodes(self):
        return self.sequence.num_nodes

    def messages(self, t):
        """``(src, dst, weight)`` of every message sent in round ``t``."""
        g = self.sequence.snapshot(t)
        if self.mode is MixingMode.PUSH_SUM:
            return _directed_messages(g)
        return _metropolis_messages(g)

    def round_matrix(self, t):
        b, r = divmod(int(t), self.sequence.period)
        if self._block[0] != b:
            self._block = (b, _block_matrices(self.sequence, b))
        return self._block[1][r]

    def raw_rounds(self, payload, q, t0=None):
        """Apply rounds ``t0+1 .. t0+q`` to ``payload`` without touching the clock."""
        t0 = self.clock if t0 is None else t0
        y = np.asarray(payload, dtype=float)
        for t in range(t0 + 1, t0 + q + 1):
            if self.message_log is not None:
                y = _round(self.messages(t), y, self.message_log, t)
            else:
                y = self.round_matrix(t) @ y
        return y

    def push_sum_raw(self, x, q, t0=None):
        """Push-sum numerators and weights before the final division."""
        x = np.asarray(x, dtype=float)
        y = self.raw_rounds(np.hstack([x, np.ones((x.shape[0], 1))]), q, t0)
        return y[:, :-1], y[:, -1]


def approx_average(session: MixingSession, x, q) -> np.ndarray:
    """``q`` gossip rounds on the stacked ``x``; advances ``session.clock`` by ``q``."""
    if q < 1:
        raise ValueError("q must be at least 1")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != session.num_nodes:
        raise ValueError(f"expected shape ({session.num_nodes}, n), got {x.shape}")
    if session.mode is MixingMode.EXACT:
        out = exact_average(x)
    elif session.mode is MixingMode.METROPOLIS:
        out = session.raw_rounds(x, q)
    else:
        num, w = session.push_sum_raw(x, q)
        out = num / w[:, None]
    session.clock += q
    return out


def dense_approx_average(session: MixingSession, x, q, t0=None) -> np.ndarray:
    """Same operator as ``approx_average`` through dense matrix products (test oracle)."""
    t0 = session.clock if t0 is None else t0
    N = session.num_nodes
    if session.mode is MixingMode.EXACT:
        return exact_average(x)
    W = np.eye(N)
    build = metropolis_matrix if session.mode is MixingMode.METROPOLIS else directed_matrix
    for t in range(t0 + 1, t0 + q + 1):
        W = build(session.sequence.snapshot(t)) @ W
    out = W @ x
    if session.mode is MixingMode.PUSH_SUM:
        out = out / (W @ np.ones(N))[:, None]
    return out


# ---------------------------------------------------------------------------
# decay estimation


class FitDegenerate(UserWarning):
    """The error curve hit machine zero too early for a clean tail fit."""


@dataclass(frozen=True)
class DecayEstimate:
    Gamma: float
    beta: float
    q: np.ndarray
    errors: np.ndarray
    fitted: np.ndarray
    degenerate: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["q", "error", "fitted"])
        for q, e, f in zip(self.q, self.errors, self.fitted):
            w.writerow([int(q), repr(float(e)), repr(float(f))])
        return buf.getvalue()


ZERO_FLOOR = 1e-14


def estimate_decay(sequence: GraphSequence, mode, trials=5, rounds_max=100, seed=0, dim=1) -> DecayEstimate:
    """Fit ``e(q) ~ N * Gamma * beta**q`` to the worst relative averaging error.

    Trial ``r`` starts at round ``r * rounds_max`` so trials see different
    windows of a time-varying sequence. The least-squares fit of ``log e``
    uses the second half of the usable rounds.
    """
    if trials < 1 or rounds_max < 2:
        raise ValueError("need trials >= 1 and rounds_max >= 2")
    N = sequence.num_nodes
    mode = MixingMode(mode)
    rng = np.random.default_rng(seed)
    err = np.zeros(rounds_max)
    for r in range(trials):
        w = rng.standard_normal((N, dim))
        w /= np.linalg.norm(w)
        target = exact_average(w)
        session = MixingSession(sequence, mode, clock=r * rounds_max)
        if mode is MixingMode.PUSH_SUM:
            y = np.hstack([w, np.ones((N, 1))])
        else:
            y = w
        for q in range(1, rounds_max + 1):
            t = session.clock + q
            y = session.round_matrix(t) @ y
            approx = y[:, :-1] / y[:, -1:] if mode is MixingMode.PUSH_SUM else y
            if mode is MixingMode.EXACT:
                approx = target
            err[q - 1] = max(err[q - 1], float(np.linalg.norm(approx - target)))
    qs = np.arange(1, rounds_max + 1)
    usable = np.flatnonzero(err <= ZERO_FLOOR)
    stop = int(usable[0]) if usable.size else rounds_max
    degenerate = stop < rounds_max
    if stop >= 2:
        lo = min(stop // 2, stop - 2)
        slope, intercept = np.polyfit(qs[lo:stop], np.log(err[lo:stop]), 1)
        beta = float(np.exp(slope))
        Gamma = float(np.exp(intercept)) / N
    else:
        beta, Gamma = 0.0, float(err[0]) / N
    if degenerate:
        warnings.warn(f"averaging error reached {ZERO_FLOOR:g} after {stop} rounds; "
                      "fit uses the rounds before that", FitDegenerate, stacklevel=2)
    fitted = N * Gamma * beta ** qs
    return DecayEstimate(Gamma, beta, qs, err.copy(), fitted, degenerate)
