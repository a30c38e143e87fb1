import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainalign.errors import ArgumentError, ConnectivityError, ValidationError
from brainalign.geometry import (
    Geometry,
    grid_edges,
    grid_geometry,
    rotation180,
    shortest_path_distances,
)


def bellman_ford(v, edges, lengths):
    d = np.full((v, v), np.inf)
    for s in range(v):
        d[s, s] = 0.0
        for _ in range(v - 1):
            for (i, j), ln in zip(edges, lengths):
                if d[s, i] + ln < d[s, j]:
                    d[s, j] = d[s, i] + ln
                if d[s, j] + ln < d[s, i]:
                    d[s, i] = d[s, j] + ln
    return d


def test_path_graph():
    d = shortest_path_distances(4, [(0, 1), (1, 2), (2, 3)], [1.0, 2.0, 3.0])
    assert d[0].tolist() == [0, 1, 3, 6]
    assert d[3, 0] == 6


def test_duplicate_edges_keep_shortest():
    d = shortest_path_distances(2, [(0, 1), (1, 0)], [5.0, 2.0])
    assert d[0, 1] == 2.0


def test_disconnected_graph_names_pair():
    with pytest.raises(ConnectivityError, match="between"):
        shortest_path_distances(3, [(0, 1)])


@pytest.mark.parametrize("lengths", [[0.0], [-1.0], [np.inf]])
def test_bad_lengths(lengths):
    with pytest.raises(ArgumentError):
        shortest_path_distances(2, [(0, 1)], lengths)


def test_out_of_range_edge():
    with pytest.raises(ArgumentError):
        shortest_path_distances(2, [(0, 2)])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_matches_bellman_ford_and_is_metric(v, seed):
    rng = np.random.default_rng(seed)
    # spanning path keeps the graph connected; extra random chords
    edges = [(int(a), int(b)) for a, b in zip(rng.permutation(v)[:-1], rng.permutation(v)[1:])]
    edges = [(i, (i + 1) % v) for i in range(v - 1)] + [
        (int(a), int(b)) for a, b in rng.integers(0, v, (v, 2)) if a != b
    ]
    lengths = rng.uniform(0.1, 3.0, len(edges))
    d = shortest_path_distances(v, edges, lengths)
    np.testing.assert_allclose(d, bellman_ford(v, edges, lengths), rtol=1e-12, atol=1e-12)
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    for i, j, k in itertools.product(range(v), repeat=3):
        assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


def test_grid_is_manhattan():
    g = grid_geometry(4, 3, spacing=0.5)
    ys, xs = np.divmod(np.arange(12), 4)
    manhattan = 0.5 * (np.abs(xs[:, None] - xs[None]) + np.abs(ys[:, None] - ys[None]))
    np.testing.assert_allclose(g.distances, manhattan)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert g.coords[5].tolist() == [0.5, 0.5]
    assert len(grid_edges(4, 3)) == 3 * 3 + 4 * 2


def test_rotation180_is_isometry():
    w, h = 5, 3
    g = grid_geometry(w, h)
    pi = rotation180(w, h)
    assert sorted(pi.tolist()) == list(range(w * h))
    assert np.array_equal(pi[pi], np.arange(w * h))
    np.testing.assert_array_equal(g.distances[np.ix_(pi, pi)], g.distances)
    # (x, y) -> (w-1-x, h-1-y)
    assert pi[0] == w * h - 1 and pi[1 * w + 1] == (h - 2) * w + (w - 2)


def test_geometry_validation():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    w = np.array([0.5, 0.5])
    Geometry(d, w)
    with pytest.raises(ValidationError):
        Geometry(np.array([[0.0, 1.0], [2.0, 0.0]]), w)
    with pytest.raises(ValidationError):
        Geometry(np.array([[1.0, 1.0], [1.0, 0.0]]), w)
    with pytest.raises(ValidationError):
        Geometry(-d, w)
    with pytest.raises(ValidationError):
        Geometry(d, np.array([0.5, 0.6]))
    with pytest.raises(ValidationError):
        Geometry(d, np.array([1.0]))
    with pytest.raises(ValidationError):
        Geometry(np.zeros((2, 3)), w)


def test_geometry_is_read_only(grid4):
    with pytest.raises(ValueError):
        grid4.distances[0, 1] = 7.0


def test_geometry_roundtrip(tmp_path, grid4):
    grid4.save(tmp_path / "D.fmat", tmp_path / "w.fmat")
    back = Geometry.load(tmp_path / "D.fmat", tmp_path / "w.fmat")
    assert np.array_equal(back.distances, grid4.distances)
    assert np.array_equal(back.weights, grid4.weights)
