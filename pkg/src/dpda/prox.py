"""Exact proximal maps and cone projections.

All functions act on the last axis, so a stack of agent vectors with shape
``(N, m)`` is projected row by row.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

EXACT_TOL = 1e-12


class ConeKind(str, enum.Enum):
    NONPOSITIVE_ORTHANT = "nonpositive_orthant"
    NONNEGATIVE_ORTHANT = "nonnegative_orthant"
    ZERO = "zero"
    # experimental: no experiment uses it, kept for library completeness
    SECOND_ORDER = "second_order"


@dataclass(frozen=True)
class ConeTag:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConeKind(self.kind))
        if self.dim < 0:
            raise ValueError(f"cone dimension must be nonnegative, got {self.dim}")

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.dim,):
            raise ValueError(f"expected trailing dimension {self.dim}, got shape {v.shape}")
        return v


def _soc_project(v):
    # K = {(u, t) : ||u|| <= t}, t is the last coordinate
    u, t = v[..., :-1], v[..., -1]
    nu = np.linalg.norm(u, axis=-1)
    out = np.zeros_like(v)
    inside = nu <= t
    out[inside] = v[inside]
    mid = ~inside & (nu > -t)
    if np.any(mid):
        scale = 0.5 * (nu[mid] + t[mid])
        out[mid, :-1] = (scale / nu[mid])[:, None] * u[mid]
        out[mid, -1] = scale
    return out


def project_cone(tag: ConeTag, v) -> np.ndarray:
    """Euclidean projection onto the cone ``tag``."""
    v = tag._check(v)
    kind = tag.kind
    if kind is ConeKind.NONPOSITIVE_ORTHANT:
        return np.minimum(v, 0.0)
    if kind is ConeKind.NONNEGATIVE_ORTHANT:
        return np.maximum(v, 0.0)
    if kind is ConeKind.ZERO:
        return np.zeros_like(v)
    if kind is ConeKind.SECOND_ORDER:
        if tag.dim == 0:
            return v.copy()
        return _soc_project(np.atleast_2d(v)).reshape(v.shape)
    raise ValueError(f"unsupported cone kind {kind!r}")


def project_polar(tag: ConeTag, v) -> np.ndarray:
    """Euclidean projection onto the polar cone of ``tag``."""
    v = tag._check(v)
    kind = tag.kind
    if kind is ConeKind.NONPOSITIVE_ORTHANT:
        return np.maximum(v, 0.0)
    if kind is ConeKind.NONNEGATIVE_ORTHANT:
        return np.minimum(v, 0.0)
    if kind is ConeKind.ZERO:
        return v.copy()
    if kind is ConeKind.SECOND_ORDER:
        # the second-order cone is self-dual, so its polar is -K
        return -project_cone(tag, -v)
    raise ValueError(f"unsupported cone kind {kind!r}")


def cone_distance(tag: ConeTag, v) -> np.ndarray:
    """Distance from ``v`` to the cone, along the last axis."""
    v = tag._check(v)
    return np.linalg.norm(v - project_cone(tag, v), axis=-1)


def polar_sign_bounds(kind: ConeKind):
    """Componentwise bounds of the polar cone for the polyhedral kinds."""
    kind = ConeKind(kind)
    if kind is ConeKind.NONPOSITIVE_ORTHANT:
        return 0.0, np.inf
    if kind is ConeKind.NONNEGATIVE_ORTHANT:
        return -np.inf, 0.0
    if kind is ConeKind.ZERO:
        return -np.inf, np.inf
    raise ValueError(f"{kind.value} cone is not an orthant")


def prox_l1_box(x, threshold, box_half_width=None) -> np.ndarray:
    """Prox of ``threshold * ||.||_1`` plus the indicator of ``[-w, w]^n``.

    Soft-thresholding followed by clipping is exact here because both terms
    separate over coordinates. ``threshold`` and ``box_half_width`` broadcast
    against ``x``.
    """
    x = np.asarray(x, dtype=float)
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0):
        raise ValueError("threshold must be nonnegative")
    y = np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)
    if box_half_width is not None:
        w = np.asarray(box_half_width, dtype=float)
        y = np.clip(y, -w, w)
    return y


def project_ball(x, radius) -> np.ndarray:
    """Radial projection onto the centered Euclidean ball, row-wise."""
    if np.any(np.asarray(radius) <= 0):
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        scale = np.minimum(1.0, radius / nrm)
    return x * scale


def prox_support_consensus(omega, gamma, average_of_omega) -> np.ndarray:
    """``gamma * (omega - P(omega))`` for a caller-supplied projection ``P(omega)``.

    With the exact projection onto the bounded consensus set this is the prox
    of ``gamma`` times its support function, evaluated at ``gamma * omega``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    omega = np.asarray(omega, dtype=float)
    average_of_omega = np.asarray(average_of_omega, dtype=float)
    if omega.shape != average_of_omega.shape:
        raise ValueError(f"shape mismatch: {omega.shape} vs {average_of_omega.shape}")
    return gamma * (omega - average_of_omega)
