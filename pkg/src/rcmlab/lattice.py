"""Finite boxes of Z^d, their edges, boundaries and the three path metrics."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import InvalidArgumentError

UNREACHABLE = math.inf


class MetricKind(enum.Enum):
    GRAPH = "graph"
    WEIGHTED = "weighted"
    SPEED = "speed"


@dataclass(frozen=True, eq=False)
class BoxGraph:
    """The box origin + [-n, n]^d with nearest-neighbour edges.

    Vertices are numbered in lexicographic order of their coordinates, edges in
    lexicographic order of their (smaller id, larger id) endpoint pairs.
    """

    d: int
    n: int
    origin: tuple
    coords: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_axis: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    neighbors: np.ndarray = field(repr=False)
    incident: np.ndarray = field(repr=False)

    @property
    def side(self):
        return 2 * self.n + 1

    @property
    def num_vertices(self):
        return self.coords.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def degree(self):
        return np.diff(self.indptr)

    @property
    def max_degree(self):
        return int(self.degree.max())

    def contains(self, point):
        rel = np.asarray(point) - np.asarray(self.origin)
        return bool(np.all(np.abs(rel) <= self.n))

    def index(self, point):
        """Vertex id of a lattice point (or an (m, d) array of points)."""
        pts = np.asarray(point, dtype=np.int64)
        rel = pts - np.asarray(self.origin, dtype=np.int64) + self.n
        if np.any(rel < 0) or np.any(rel >= self.side):
            raise InvalidArgumentError(f"point {point} outside box")
        strides = self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)
        ids = rel @ strides
        return int(ids) if ids.ndim == 0 else ids

    def edge_index(self, x, y):
        """Edge id of the unordered pair {x, y} of vertex ids."""
        a, b = (x, y) if x < y else (y, x)
        lo, hi = self.indptr[a], self.indptr[a + 1]
        hits = np.nonzero(self.neighbors[lo:hi] == b)[0]
        if hits.size == 0:
            raise InvalidArgumentError(f"{x} and {y} are not adjacent")
        return int(self.incident[lo + hits[0]])

    def point(self, vid):
        return tuple(int(c) for c in self.coords[vid])

    def sup_norm(self, center=None):
        """|x - center|_inf for every vertex."""
        c = np.asarray(self.origin if center is None else center)
        return np.abs(self.coords - c).max(axis=1)

    def l1_norm(self, center=None):
        c = np.asarray(self.origin if center is None else center)
        return np.abs(self.coords - c).sum(axis=1)


@functools.lru_cache(maxsize=32)
def _cached_box(d, n, origin):
    side = 2 * n + 1
    shape = (side,) * d
    local = np.indices(shape, dtype=np.int64).reshape(d, -1).T
    coords = local - n + np.asarray(origin, dtype=np.int64)
    num_v = side**d
    strides = side ** np.arange(d - 1, -1, -1, dtype=np.int64)
    us, vs, axes = [], [], []
    ids = np.arange(num_v, dtype=np.int64)
    for k in range(d):
        mask = local[:, k] < side - 1
        u = ids[mask]
        us.append(u)
        vs.append(u + strides[k])
        axes.append(np.full(u.size, k, dtype=np.int64))
    u = np.concatenate(us)
    v = np.concatenate(vs)
    ax = np.concatenate(axes)
    order = np.lexsort((v, u))
    edges = np.stack([u[order], v[order]], axis=1)
    edge_axis = ax[order]
    num_e = edges.shape[0]
    eid = np.arange(num_e, dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    inc = np.concatenate([eid, eid])
    order = np.lexsort((cols, rows))
    rows, cols, inc = rows[order], cols[order], inc[order]
    indptr = np.zeros(num_v + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_v), out=indptr[1:])
    for arr in (coords, edges, edge_axis, indptr, cols, inc):
        arr.setflags(write=False)
    return BoxGraph(d, n, tuple(int(o) for o in origin), coords, edges, edge_axis, indptr, cols, inc)


def build_box(d, n, origin=None):
    """Box of radius n around origin (default 0) in Z^d."""
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise InvalidArgumentError(f"dimension must be a positive integer, got {d!r}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"radius must be a positive integer, got {n!r}")
    if origin is None:
        origin = (0,) * d
    origin = tuple(int(o) for o in np.atleast_1d(origin))
    if len(origin) != d:
        raise InvalidArgumentError("origin has the wrong dimension")
    return _cached_box(int(d), int(n), origin)


def edge_costs(g, env, kind):
    """Per-edge length used by a metric; np.inf marks edges absent from the metric graph."""
    if kind is MetricKind.GRAPH:
        if env is None:
            return np.ones(g.num_edges)
        return np.where(env.conductances > 0, 1.0, np.inf)
    if env is None:
        raise InvalidArgumentError(f"{kind.name} distance needs an environment")
    w = env.conductances
    with np.errstate(divide="ignore"):
        cost = np.where(w > 0, np.minimum(1.0, 1.0 / np.sqrt(np.where(w > 0, w, 1.0))), np.inf)
    if kind is MetricKind.WEIGHTED:
        return cost
    if env.speed.value == "CSRW":
        return np.where(w > 0, 1.0, np.inf)
    return cost / math.sqrt(g.max_degree)


@functools.lru_cache(maxsize=16)
def _cost_matrix(g, env, kind):
    cost = edge_costs(g, env, kind)
    keep = np.isfinite(cost)
    e = g.edges[keep]
    c = cost[keep]
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sp.csr_matrix((np.concatenate([c, c]), (rows, cols)), shape=(g.num_vertices,) * 2)


@functools.lru_cache(maxsize=64)
def _distances_cached(g, env, kind, source):
    if kind is MetricKind.GRAPH and env is None:
        out = g.l1_norm(g.coords[source]).astype(float)
    else:
        mat = _cost_matrix(g, env, kind)
        unweighted = kind is MetricKind.GRAPH or (kind is MetricKind.SPEED and env.speed.value == "CSRW")
        out = csgraph.shortest_path(mat, directed=False, indices=source, unweighted=unweighted)
    out.setflags(write=False)
    return out


def distances_from(g, env, kind, source):
    """Single-source distances to every vertex (UNREACHABLE where disconnected)."""
    if kind is not MetricKind.GRAPH and env is None:
        raise InvalidArgumentError(f"{kind.name} distance needs an environment")
    return _distances_cached(g, env, kind, int(source))


def distance(g, env, kind, x, y):
    if x == y:
        return 0.0
    return float(distances_from(g, env, kind, x)[y])


def ball(g, kind, env, x, r, closed=False):
    """Vertex ids at distance < r from x (<= r when closed)."""
    if r < 0:
        raise InvalidArgumentError("radius must be nonnegative")
    dist = distances_from(g, env, kind, x)
    mask = dist <= r if closed else dist < r
    return np.nonzero(mask)[0]


def lattice_box(g, center, radius):
    """Vertex ids of center + [-radius, radius]^d intersected with g."""
    return np.nonzero(g.sup_norm(center) <= radius)[0]


def boundary(g, A, closure=False):
    """Inner boundary of A: vertices of A with a lattice neighbour outside A.

    With closure=True return instead A together with all its neighbours in g.
    """
    A = np.unique(np.asarray(A, dtype=np.int64))
    inside = np.zeros(g.num_vertices, dtype=bool)
    inside[A] = True
    src = np.repeat(np.arange(g.num_vertices), g.degree)
    if closure:
        hit = inside[src]
        out = inside.copy()
        out[g.neighbors[hit]] = True
        return np.nonzero(out)[0]
    missing = g.degree < 2 * g.d
    outside_nbr = np.zeros(g.num_vertices, dtype=bool)
    np.logical_or.at(outside_nbr, src, ~inside[g.neighbors])
    return A[(missing | outside_nbr)[A]]
