import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpda.prox import (ConeKind, ConeTag, cone_distance, polar_sign_bounds, project_ball,
                       project_cone, project_polar, prox_l1_box, prox_support_consensus)

TOL = 1e-12
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_soft_threshold_examples():
    assert np.allclose(prox_l1_box([1.0, -0.2], 0.5), [0.5, 0.0])
    x = np.array([0.3, -7.0, 2.5])
    assert np.array_equal(prox_l1_box(x, 0.0), x)
    assert np.allclose(prox_l1_box([3.0], 0.5, 2.0), [2.0])


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        prox_l1_box([1.0], -0.1)


def test_orthant_and_zero_examples():
    tag = ConeTag(ConeKind.NONPOSITIVE_ORTHANT, 2)
    v = np.array([-1.0, 2.0])
    assert np.array_equal(project_cone(tag, v), [-1.0, 0.0])
    assert np.array_equal(project_polar(tag, v), [0.0, 2.0])
    z = ConeTag("zero", 2)
    assert np.array_equal(project_cone(z, v), [0.0, 0.0])
    assert np.array_equal(project_polar(z, v), v)


def test_dimension_checked():
    with pytest.raises(ValueError):
        project_cone(ConeTag("zero", 3), np.ones(2))
    with pytest.raises(ValueError):
        ConeTag("not_a_cone", 2)


def test_polar_sign_bounds():
    assert polar_sign_bounds("nonpositive_orthant") == (0.0, np.inf)
    assert polar_sign_bounds("nonnegative_orthant") == (-np.inf, 0.0)
    with pytest.raises(ValueError):
        polar_sign_bounds("second_order")


def test_soc_origin_example():
    tag = ConeTag(ConeKind.SECOND_ORDER, 3)
    assert np.array_equal(project_cone(tag, [0.0, 0.0, -1.0]), [0.0, 0.0, 0.0])


def _soc_qp(v):
    # independent oracle: the projection as a conic program
    import cvxpy as cp
    p = cp.Variable(3)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(p - v)), [cp.norm(p[:2]) <= p[2]])
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return p.value


@pytest.mark.filterwarnings("ignore:Solution may be inaccurate")
def test_soc_matches_qp_oracle_on_grid():
    tag = ConeTag(ConeKind.SECOND_ORDER, 3)
    grid = np.linspace(-2, 2, 5)
    for a in grid:
        for b in grid:
            for t in grid:
                v = np.array([a, b, t])
                p, q = project_cone(tag, v), _soc_qp(v)
                assert np.linalg.norm(p[:2]) <= p[2] + TOL
                assert np.allclose(p, q, atol=1e-6), v


def test_soc_stacked_rows():
    tag = ConeTag(ConeKind.SECOND_ORDER, 3)
    V = np.random.default_rng(0).standard_normal((50, 3))
    stacked = project_cone(tag, V)
    rows = np.array([project_cone(tag, v) for v in V])
    assert np.array_equal(stacked, rows)


@pytest.mark.parametrize("kind", list(ConeKind))
def test_moreau_decomposition(kind):
    rng = np.random.default_rng(1)
    tag = ConeTag(kind, 4)
    V = rng.standard_normal((1000, 4)) * 3
    P = project_cone(tag, V)
    Q = project_polar(tag, V)
    assert np.max(np.abs(P + Q - V)) <= TOL * 10
    assert np.max(np.abs(np.sum(P * Q, axis=1))) <= TOL * 10


@pytest.mark.parametrize("kind", list(ConeKind))
def test_projection_lands_in_cone(kind):
    tag = ConeTag(kind, 4)
    V = np.random.default_rng(2).standard_normal((200, 4))
    P = project_cone(tag, V)
    assert np.all(cone_distance(tag, P) <= TOL)
    # polar membership: nonpositive inner product with cone points
    Q = project_polar(tag, V)
    assert np.all(np.sum(P * Q, axis=1) <= TOL)


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, st.sampled_from(list(ConeKind)))
def test_cone_projections_nonexpansive(u, v, kind):
    tag = ConeTag(kind, 3)
    for proj in (project_cone, project_polar):
        d = np.linalg.norm(proj(tag, u) - proj(tag, v))
        assert d <= np.linalg.norm(u - v) * (1 + TOL) + TOL


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, st.floats(0, 10), st.one_of(st.none(), st.floats(0.1, 50)))
def test_prox_l1_box_nonexpansive(u, v, thr, box):
    d = np.linalg.norm(prox_l1_box(u, thr, box) - prox_l1_box(v, thr, box))
    assert d <= np.linalg.norm(u - v) * (1 + TOL) + TOL


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-20, 20)), st.floats(0, 5), st.floats(0.5, 10))
def test_prox_l1_box_optimality(x, thr, w):
    y = prox_l1_box(x, thr, w)
    assert np.all(np.abs(y) <= w)
    # residual r = x - y must lie in thr * d|y| + N_box(y), coordinatewise
    r = x - y
    for yj, rj in zip(y, r):
        if abs(yj) < w and yj != 0:
            assert abs(rj - thr * np.sign(yj)) <= 1e-9
        elif yj == 0:
            assert abs(rj) <= thr + 1e-9
        else:
            # at the box face the normal cone adds anything pointing outward
            assert rj * np.sign(yj) >= thr - 1e-9


def test_project_ball_examples():
    assert np.array_equal(project_ball(np.array([0.1, 0.2]), 1.0), [0.1, 0.2])
    assert np.allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    assert np.array_equal(project_ball(np.zeros(3), 1.0), np.zeros(3))
    with pytest.raises(ValueError):
        project_ball(np.ones(2), 0.0)


def test_project_ball_idempotent():
    X = np.random.default_rng(3).standard_normal((100, 5)) * 4
    once = project_ball(X, 2.0)
    assert np.allclose(project_ball(once, 2.0), once, rtol=0, atol=1e-15)
    assert np.all(np.linalg.norm(once, axis=1) <= 2.0 * (1 + 1e-15))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, st.floats(0.1, 100))
def test_project_ball_nonexpansive(u, v, r):
    d = np.linalg.norm(project_ball(u, r) - project_ball(v, r))
    assert d <= np.linalg.norm(u - v) * (1 + TOL) + TOL


def test_support_consensus_examples():
    omega = np.array([[1.5, -2.0], [1.5, -2.0]])
    avg = np.broadcast_to(omega.mean(axis=0), omega.shape)
    assert np.array_equal(prox_support_consensus(omega, 3.0, avg), np.zeros((2, 2)))
    omega = np.array([[0.0], [2.0]])
    out = prox_support_consensus(omega, 1.0, np.array([[1.0], [1.0]]))
    assert np.array_equal(out, [[-1.0], [1.0]])
    with pytest.raises(ValueError):
        prox_support_consensus(omega, 1.0, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        prox_support_consensus(omega, 0.0, omega)


def test_support_consensus_orthogonal_to_consensus():
    rng = np.random.default_rng(4)
    for _ in range(20):
        omega = rng.standard_normal((6, 3))
        avg = np.broadcast_to(omega.mean(axis=0), omega.shape)
        out = prox_support_consensus(omega, 0.7, avg)
        z = rng.standard_normal(3)
        assert abs(np.sum(out @ z)) <= 1e-12
