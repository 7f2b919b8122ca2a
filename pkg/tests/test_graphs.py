import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from dpda.graphs import (GraphSequence, GraphSnapshot, SequenceKind, fig7_fixture,
                         generate_small_world, incidence, is_connected, is_strongly_connected,
                         lambda2_weighted, laplacian, sample_sequence)


def _components(g, strong=False):
    e = g.edge_array
    A = csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.num_nodes,) * 2)
    return connected_components(A, directed=g.directed, connection="strong" if strong else "weak")[0]


small_world_args = st.integers(3, 25).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(n, n * (n - 1) // 2), st.integers(0, 2**32)))


def test_snapshot_validation():
    with pytest.raises(ValueError):
        GraphSnapshot(3, ((1, 0),))
    with pytest.raises(ValueError):
        GraphSnapshot(3, ((0, 0),))
    with pytest.raises(ValueError):
        GraphSnapshot(3, ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        GraphSnapshot(3, ((0, 5),))
    g = GraphSnapshot.undirected(3, [(2, 0), (1, 0)])
    assert g.edges == ((0, 1), (0, 2))


def test_neighbors_and_degrees():
    g = GraphSnapshot.undirected(4, [(0, 1), (1, 2), (1, 3)])
    assert g.neighbors == ((1,), (0, 2, 3), (1,), (1,))
    assert list(g.degrees) == [1, 3, 1, 1]
    d = GraphSnapshot.digraph(3, [(0, 1), (0, 2), (2, 0)])
    assert d.out_neighbors == ((0, 1, 2), (1,), (0, 2))
    assert d.in_neighbors == ((0, 2), (0, 1), (0, 2))
    assert list(d.degrees) == [3, 1, 2]


def test_small_world_triangle():
    g = generate_small_world(3, 3, 11)
    assert g.edges == ((0, 1), (0, 2), (1, 2))


def test_small_world_rejects_bad_counts():
    with pytest.raises(ValueError):
        generate_small_world(5, 4, 0)
    with pytest.raises(ValueError):
        generate_small_world(5, 11, 0)


@pytest.mark.parametrize("N,E", [(10, 15), (10, 45), (40, 60), (40, 180)])
def test_small_world_scenarios(N, E):
    g = generate_small_world(N, E, 7)
    assert g.num_nodes == N and g.num_edges == E
    assert is_connected(g)


@settings(max_examples=60, deadline=None)
@given(small_world_args)
def test_small_world_connected_bfs_vs_scipy(args):
    n, e, seed = args
    g = generate_small_world(n, e, seed)
    assert g.num_edges == e
    assert is_connected(g)
    assert _components(g) == 1


def test_connectivity_detects_split():
    g = GraphSnapshot.undirected(4, [(0, 1), (2, 3)])
    assert not is_connected(g)
    d = GraphSnapshot.digraph(3, [(0, 1), (1, 2)])
    assert not is_strongly_connected(d)
    assert is_strongly_connected(GraphSnapshot.digraph(3, [(0, 1), (1, 2), (2, 0)]))


def test_fig7_fixture():
    g = fig7_fixture()
    assert g.num_nodes == 12 and g.directed
    arcs = set(g.edges)
    # fixture file is 1-based, snapshots are 0-based
    assert (9, 6) in arcs and (6, 9) not in arcs
    assert (7, 5) in arcs and (5, 7) in arcs
    assert g.num_edges == 24
    assert is_strongly_connected(g)
    assert _components(g, strong=True) == 1


def test_fig7_single_bidirectional_pair():
    arcs = set(fig7_fixture().edges)
    both = {tuple(sorted(a)) for a in arcs if (a[1], a[0]) in arcs}
    assert both == {(5, 7)}


def test_path_laplacian():
    g = GraphSnapshot.undirected(3, [(0, 1), (1, 2)])
    assert np.array_equal(laplacian(g), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    H = incidence(g)
    assert np.array_equal(H, [[1, -1, 0], [0, 1, -1]])


def test_directed_algebra_rejected():
    d = GraphSnapshot.digraph(2, [(0, 1)])
    with pytest.raises(ValueError):
        laplacian(d)
    with pytest.raises(ValueError):
        incidence(d)


def test_incidence_laplacian_identity_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(3, 15))
        e = int(rng.integers(n, n * (n - 1) // 2 + 1))
        g = generate_small_world(n, e, int(rng.integers(2**31)))
        H, W = incidence(g), laplacian(g)
        assert np.array_equal(H.T @ H, W)
        assert np.array_equal(W @ np.ones(n), np.zeros(n))
        # Omega <= 2 diag(d)
        assert np.linalg.eigvalsh(2 * np.diag(g.degrees) - W).min() >= -1e-12


def test_lambda2_known_spectra():
    k3 = GraphSnapshot.undirected(3, [(0, 1), (0, 2), (1, 2)])
    assert lambda2_weighted(laplacian(k3)) == pytest.approx(3.0, abs=1e-12)
    p2 = GraphSnapshot.undirected(2, [(0, 1)])
    assert lambda2_weighted(laplacian(p2)) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        lambda2_weighted(np.array([[1.0, 2.0], [0.0, 1.0]]))


def _lambda2_inverse_power(W, iters=5000):
    # shift the nullspace direction 1 up, then inverse iteration with Rayleigh quotient
    n = W.shape[0]
    shift = W.diagonal().max() * 2 + 1
    B = W + shift * np.ones((n, n)) / n
    x = np.random.default_rng(5).standard_normal(n)
    lam = None
    for _ in range(iters):
        x = np.linalg.solve(B, x)
        x /= np.linalg.norm(x)
        new = x @ B @ x
        if lam is not None and abs(new - lam) < 1e-15 * abs(new):
            break
        lam = new
    return new


def test_lambda2_matches_inverse_power():
    for seed in range(5):
        g = generate_small_world(12, 20, seed)
        W = laplacian(g)
        assert abs(lambda2_weighted(W) - _lambda2_inverse_power(W)) <= 1e-8


def _tv(base, M=5, p=0.8, seed=3, kind="tv_undirected"):
    return GraphSequence(base, M, p, seed, kind)


def test_sequence_sizes_paper_setting():
    seq = _tv(generate_small_world(10, 45, 1))
    for t in range(4):
        assert sample_sequence(seq, t).num_edges == 36


def test_sequence_full_keep_prob():
    base = generate_small_world(8, 14, 2)
    seq = _tv(base, p=1.0)
    for t in range(15):
        g = seq.snapshot(t)
        assert g.edges == (() if t % 5 == 4 else base.edges)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.floats(0, 1), st.integers(0, 2**32), st.integers(0, 20))
def test_block_union_is_base(M, p, seed, b):
    base = generate_small_world(9, 20, 4)
    seq = _tv(base, M, p, seed)
    union = set()
    for t in range(b * M, (b + 1) * M):
        g = seq.snapshot(t)
        assert set(g.edges) <= set(base.edges)
        union |= set(g.edges)
    assert union == set(base.edges)


def test_block_union_directed():
    base = fig7_fixture()
    seq = _tv(base, kind="tv_directed")
    for b in range(10):
        union = set()
        for t in range(5 * b, 5 * b + 5):
            union |= set(seq.snapshot(t).edges)
        assert union == set(base.edges)


def test_sequence_kind_must_match_orientation():
    with pytest.raises(ValueError):
        _tv(fig7_fixture(), kind="tv_undirected")
    with pytest.raises(ValueError):
        _tv(generate_small_world(5, 6, 0), kind="tv_directed")


def test_sequence_deterministic_in_seed():
    base = generate_small_world(10, 45, 1)
    a = [_tv(base).snapshot(t).edges for t in range(40)]
    b = [_tv(base).snapshot(t).edges for t in reversed(range(40))][::-1]
    assert a == b
    c = [_tv(base, seed=4).snapshot(t).edges for t in range(40)]
    assert a != c


def test_sequence_deterministic_across_processes():
    code = ("from dpda.graphs import *;"
            "s=GraphSequence(generate_small_world(10,45,1),5,0.8,3,'tv_undirected');"
            "print([s.snapshot(t).edges for t in (0,7,33)])")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    seq = _tv(generate_small_world(10, 45, 1))
    assert out.stdout.strip() == str([seq.snapshot(t).edges for t in (0, 7, 33)])


def test_static_sequence():
    base = generate_small_world(6, 8, 0)
    seq = GraphSequence(base)
    assert seq.kind is SequenceKind.STATIC
    assert all(seq.snapshot(t) is base for t in range(5))


def test_serialization_roundtrip():
    base = generate_small_world(7, 12, 9)
    assert GraphSnapshot.from_dict(json.loads(json.dumps(base.to_dict()))) == base
    seq = _tv(base)
    back = GraphSequence.from_dict(json.loads(json.dumps(seq.to_dict())))
    assert [back.snapshot(t).edges for t in range(12)] == [seq.snapshot(t).edges for t in range(12)]
