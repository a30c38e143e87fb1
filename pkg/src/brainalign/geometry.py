"""Per-subject anatomical geometry: pairwise geodesic distances and vertex weights."""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import ArgumentError, ConnectivityError, ValidationError
from .matrixio import read_matrix, read_vector, write_matrix


@dataclass(frozen=True, eq=False)
class Geometry:
    """Dense distance matrix ``distances`` (v x v) and vertex weights ``weights`` (v,).

    ``coords`` optionally holds lattice coordinates (v x 2) for grid layouts;
    it is only used for visual export.
    """

    distances: np.ndarray
    weights: np.ndarray
    coords: np.ndarray = None
    shape: tuple = None

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValidationError(f"distances must be square, got {d.shape}")
        if w.shape[0] != d.shape[0]:
            raise ValidationError(f"{w.shape[0]} weights for {d.shape[0]} vertices")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValidationError("distances must be finite and non-negative")
        if not np.array_equal(d, d.T):
            raise ValidationError("distances must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValidationError("distances must have a zero diagonal")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be non-negative and sum to 1")
        d.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "weights", w)

    @property
    def num_vertices(self):
        return self.distances.shape[0]

    def save(self, distances_path, weights_path):
        write_matrix(self.distances, distances_path)
        write_matrix(self.weights[None, :], weights_path)

    @classmethod
    def load(cls, distances_path, weights_path):
        return cls(read_matrix(distances_path, np.float64), read_vector(weights_path))


def shortest_path_distances(num_vertices, edges, lengths=None):
    """All-pairs shortest-path lengths on an undirected graph.

    ``edges`` is an iterable of ``(i, j)`` vertex pairs; ``lengths`` gives a
    positive length per edge (default 1). Raises ``ConnectivityError`` when
    the graph is disconnected.
    """
    edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if lengths is None:
        lengths = np.ones(len(edges))
    lengths = np.asarray(lengths, dtype=np.float64)
    if lengths.shape != (len(edges),):
        raise ArgumentError("one length per edge is required")
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise ArgumentError("edge lengths must be positive and finite")
    if len(edges) and (edges.min() < 0 or edges.max() >= num_vertices):
        raise ArgumentError("edge endpoint out of range")
    # duplicate edges keep their shortest length (the sparse constructor would sum them)
    keep = {}
    for (i, j), ln in zip(edges.tolist(), lengths.tolist()):
        key = (min(i, j), max(i, j))
        keep[key] = min(ln, keep.get(key, np.inf))
    ij = np.array(list(keep.keys()), dtype=np.int64).reshape(-1, 2)
    graph = coo_matrix(
        (np.array(list(keep.values()), dtype=np.float64), (ij[:, 0], ij[:, 1])),
        shape=(num_vertices, num_vertices),
    ).tocsr()
    d = shortest_path(graph, method="D", directed=False)
    if not np.all(np.isfinite(d)):
        i, j = np.argwhere(~np.isfinite(d))[0]
        raise ConnectivityError(f"graph is disconnected: no path between {i} and {j}")
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


def grid_edges(width, height):
    """4-neighbour lattice edges; vertex ``(x, y)`` has index ``y * width + x``."""
    edges = []
    for y in range(height):
        for x in range(width):
            i = y * width + x
            if x + 1 < width:
                edges.append((i, i + 1))
            if y + 1 < height:
                edges.append((i, i + width))
    return edges


def grid_geometry(width, height, spacing=1.0):
    """Rectangular lattice with 4-neighbour geodesics and uniform weights."""
    if width < 1 or height < 1:
        raise ArgumentError(f"grid dimensions must be >= 1, got {width}x{height}")
    if spacing <= 0:
        raise ArgumentError(f"spacing must be positive, got {spacing}")
    v = width * height
    edges = grid_edges(width, height)
    d = shortest_path_distances(v, edges, np.full(len(edges), float(spacing)))
    ys, xs = np.divmod(np.arange(v), width)
    coords = np.column_stack([xs, ys]).astype(np.float64) * spacing
    return Geometry(d, np.full(v, 1.0 / v), coords=coords, shape=(width, height))


def rotation180(width, height):
    """Vertex permutation of a ``width x height`` grid rotated by 180 degrees."""
    v = width * height
    return (v - 1) - np.arange(v)
