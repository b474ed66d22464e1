"""Level-set percolation {omega >= xi}: clusters, holes, good paths and hole-to-cluster maps."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import bfs, union_find_roots
from .errors import HoleMapInfeasibleError, InvalidArgumentError
from .environment import Speed
from .stats import wilson_interval


class GiantState(enum.Enum):
    SPANNING = "spanning"
    SPANNING_SEVERAL = "spanning_several"
    LARGEST = "largest_not_spanning"
    NONE = "none"


@dataclass(frozen=True)
class Hole:
    vertices: np.ndarray
    diameter: int
    touches_boundary: bool

    @property
    def size(self):
        return int(self.vertices.size)


def _canonical_labels(roots):
    # roots are component minima, so ranking them gives labels in lexicographic order
    rank = np.cumsum(roots == np.arange(roots.size)) - 1
    return rank[roots].astype(np.int64), int(rank[-1]) + 1 if roots.size else 0


@dataclass(frozen=True, eq=False)
class ClusterDecomposition:
    """Clusters of the open-edge graph, the giant proxy and the holes around it."""

    env: object = field(repr=False)
    threshold: float
    open_edges: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)
    giant: int | None
    state: GiantState
    hole_labels: np.ndarray = field(repr=False)
    holes: tuple = field(repr=False)

    @property
    def num_clusters(self):
        return int(self.sizes.size)

    @property
    def flagged(self):
        return self.state is not GiantState.SPANNING

    @property
    def giant_mask(self):
        if self.giant is None:
            return np.zeros(self.labels.size, dtype=bool)
        return self.labels == self.giant

    @property
    def hole_mask(self):
        return self.hole_labels >= 0

    def hole_of(self, x):
        """The hole containing vertex x, or None when x is in the giant cluster."""
        h = self.hole_labels[x]
        return None if h < 0 else self.holes[h]

    def density(self, center=None, radius=None):
        """|B ∩ giant| / |B| for the lattice box B of the given radius (default: whole box)."""
        g = self.env.graph
        if radius is None:
            mask = np.ones(g.num_vertices, dtype=bool)
        else:
            mask = g.sup_norm(center) <= radius
        return float(self.giant_mask[mask].mean())


def open_edge_mask(env, xi):
    return env.conductances >= xi


def decompose(env, xi):
    """Union-find labelling of {omega >= xi}, giant proxy and holes.

    The giant proxy is the cluster touching two opposite faces of the box; if
    several do, the largest of them (ties to the lowest label); if none does,
    the largest cluster. Both fallbacks are flagged through ``state``. A box
    without open edges has no giant (state NONE) and all vertices form holes.
    """
    if not 0.0 < xi <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {xi}")
    g = env.graph
    is_open = open_edge_mask(env, xi)
    roots = union_find_roots(g.num_vertices, g.edges[:, 0], g.edges[:, 1], is_open)
    labels, k = _canonical_labels(roots)
    sizes = np.bincount(labels, minlength=k)

    giant = None
    state = GiantState.NONE
    if is_open.any():
        c = g.coords - np.asarray(g.origin)
        spanning = np.zeros(k, dtype=bool)
        for ax in range(g.d):
            lo = np.zeros(k, dtype=bool)
            hi = np.zeros(k, dtype=bool)
            lo[labels[c[:, ax] == -g.n]] = True
            hi[labels[c[:, ax] == g.n]] = True
            spanning |= lo & hi
        # singleton clusters cannot span once n >= 1
        span_ids = np.nonzero(spanning & (sizes > 1))[0]
        if span_ids.size == 1:
            giant, state = int(span_ids[0]), GiantState.SPANNING
        elif span_ids.size > 1:
            giant = int(span_ids[np.argmax(sizes[span_ids])])
            state = GiantState.SPANNING_SEVERAL
        else:
            giant, state = int(np.argmax(sizes)), GiantState.LARGEST

    in_giant = labels == giant if giant is not None else np.zeros(g.num_vertices, dtype=bool)
    hole_labels, holes = _holes(g, in_giant)
    for arr in (is_open, labels, sizes, hole_labels):
        arr.setflags(write=False)
    return ClusterDecomposition(env, float(xi), is_open, labels, sizes, giant, state, hole_labels, holes)


def _holes(g, in_giant):
    out = ~in_giant
    active = out[g.edges[:, 0]] & out[g.edges[:, 1]]
    roots = union_find_roots(g.num_vertices, g.edges[:, 0], g.edges[:, 1], active)
    hole_labels = np.full(g.num_vertices, -1, dtype=np.int64)
    if not out.any():
        return hole_labels, ()
    ids = np.nonzero(out)[0]
    rank = np.cumsum(roots[ids] == ids) - 1
    pos = np.full(g.num_vertices, -1, dtype=np.int64)
    pos[ids] = rank
    lab = pos[roots[ids]]
    n_holes = int(rank[-1]) + 1
    hole_labels[ids] = lab
    order = np.argsort(lab, kind="stable")
    starts = np.searchsorted(lab[order], np.arange(n_holes + 1))
    c = (g.coords - np.asarray(g.origin))[ids[order]]
    span = np.maximum.reduceat(c, starts[:-1], axis=0) - np.minimum.reduceat(c, starts[:-1], axis=0)
    diam = span.max(axis=1)
    touches = np.maximum.reduceat(np.abs(c).max(axis=1), starts[:-1]) == g.n
    sorted_ids = ids[order]
    sorted_ids.setflags(write=False)
    holes = [
        Hole(sorted_ids[starts[h] : starts[h + 1]], int(diam[h]), bool(touches[h])) for h in range(n_holes)
    ]
    return hole_labels, tuple(holes)


def components_dfs(g, is_open):
    """Reference labelling by iterative depth-first search (slow; for cross-checks)."""
    adj = [[] for _ in range(g.num_vertices)]
    for (u, v), o in zip(g.edges, is_open):
        if o:
            adj[u].append(v)
            adj[v].append(u)
    labels = np.full(g.num_vertices, -1, dtype=np.int64)
    nxt = 0
    for s in range(g.num_vertices):
        if labels[s] >= 0:
            continue
        labels[s] = nxt
        stack = [s]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if labels[y] < 0:
                    labels[y] = nxt
                    stack.append(y)
        nxt += 1
    return labels


# ---------------------------------------------------------------- hole statistics


@dataclass(frozen=True)
class TailRow:
    n: int
    count: int
    trials: int
    tail_estimate: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class HoleTailTable:
    """Empirical P(diam H_0 > n) per threshold n and P(origin outside the giant)."""

    threshold: float
    rows: tuple
    finite_cluster: TailRow
    samples: int
    sites_per_sample: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "count", "tail_estimate", "ci_low", "ci_high"])
            for r in self.rows:
                w.writerow([r.n, r.count, repr(r.tail_estimate), repr(r.ci_low), repr(r.ci_high)])


def site_hole_diameters(dec, sites):
    """Diameter of the hole containing each site; -1 for sites in the giant cluster."""
    diam = np.array([h.diameter for h in dec.holes] + [-1], dtype=np.int64)
    return diam[dec.hole_labels[sites]]


def hole_stats(samples, xi, thresholds=(0, 1, 2, 3), window=0, level=0.95):
    """Tail table over an iterable of environments.

    With ``window = w > 0``, every vertex within sup-distance w of the box
    centre acts as an origin (translation invariance of the i.i.d. field), which
    multiplies the trial count; such pooled trials are positively correlated,
    so the Wilson intervals are then only indicative.
    """
    hist = None
    finite = 0
    n_samples = 0
    n_sites = 0
    thresholds = tuple(int(t) for t in thresholds)
    for env in samples:
        g = env.graph
        dec = decompose(env, xi)
        sites = np.nonzero(g.sup_norm() <= window)[0]
        dia = site_hole_diameters(dec, sites)
        counts = np.array([(dia > t).sum() for t in thresholds], dtype=np.int64)
        hist = counts if hist is None else hist + counts
        finite += int((dia >= 0).sum())
        n_samples += 1
        n_sites = sites.size
    if n_samples == 0:
        raise InvalidArgumentError("hole_stats needs at least one sample")
    trials = n_samples * n_sites
    rows = []
    for t, c in zip(thresholds, hist):
        lo, hi = wilson_interval(int(c), trials, level)
        rows.append(TailRow(t, int(c), trials, c / trials, lo, hi))
    lo, hi = wilson_interval(finite, trials, level)
    return HoleTailTable(float(xi), tuple(rows), TailRow(-1, finite, trials, finite / trials, lo, hi), n_samples, n_sites)


# --------------------------------------------------------------------- good paths


def _trace(parent, end):
    path = [int(end)]
    while parent[path[-1]] >= 0:
        path.append(int(parent[path[-1]]))
    return path[::-1]


def good_path_exists(env, target, alpha, n, center=None):
    """Path of edges with omega > n^-alpha from the target to the frontier of B_n.

    ``target`` is a vertex id or a pair of adjacent vertex ids (an edge, in which
    case either endpoint may start the path). The search stays inside B_n around
    ``center`` (default: the box origin). Returns (found, vertex path or None).
    """
    if not 0 < alpha < 2:
        raise InvalidArgumentError("alpha must lie in (0, 2)")
    g = env.graph
    floor = float(n) ** (-alpha)
    dist = g.sup_norm(center)
    if dist.max() < n:
        raise InvalidArgumentError(f"B_{n} does not fit in the sampled box")
    inside = dist <= n
    frontier = dist == n
    sources = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if not inside[sources].all():
        raise InvalidArgumentError("target must lie inside B_n")
    slot_ok = env.neighbor_conductances > floor
    parent, hit = bfs(g.indptr, g.neighbors, slot_ok, sources, frontier, inside)
    if hit < 0:
        return False, None
    return True, _trace(parent, hit)


# ---------------------------------------------------------------- hole map


@dataclass(frozen=True)
class Certificate:
    hole_vertex: int
    image: int
    start_edge: tuple | None
    path: tuple
    min_conductance: float

    @property
    def length(self):
        return len(self.path) - 1


@dataclass(frozen=True, eq=False)
class InjectiveHoleMap:
    """Injection from hole vertices of B_n into giant-cluster vertices of B_n, with paths."""

    n: int
    m: int
    alpha: float
    floor: float
    bound_inverse: float
    length_bound: float
    variant: Speed
    mapping: dict
    certificates: dict = field(repr=False)

    def __len__(self):
        return len(self.mapping)


def subbox_index(coords, m):
    """z with x in (2m+1) z + [-m, m]^d."""
    return np.floor_divide(np.asarray(coords) + m, 2 * m + 1)


def default_subbox_size(n, d):
    return max(1, int(math.floor(math.log(n) ** (d + 1))))


def build_hole_map(dec, alpha, m, n, variant=Speed.CSRW):
    """Greedy injection of B_n ∩ holes into B_n ∩ giant inside each sub-box, with certificates.

    Within each sub-box the hole vertices are taken in lexicographic order and
    each is sent to the nearest (l1, ties lexicographic) unused giant vertex of
    the same sub-box. Certificate paths run through edges with
    omega > (2n)^-alpha, hence 1/omega < 4 n^alpha; they may use the whole
    sampled box, which should therefore be larger than B_n.
    """
    if m < 1:
        raise InvalidArgumentError("sub-box size must be at least 1")
    if dec.giant is None:
        raise InvalidArgumentError("decomposition has no giant cluster")
    env = dec.env
    g = env.graph
    d = g.d
    variant = Speed(variant)
    in_bn = g.sup_norm() <= n
    if not ((g.sup_norm() == n).any()):
        raise InvalidArgumentError(f"B_{n} does not fit in the sampled box")
    floor = (2.0 * n) ** (-alpha)
    giant = dec.giant_mask
    holes = np.nonzero(in_bn & dec.hole_mask)[0]
    cluster = np.nonzero(in_bn & giant)[0]
    rel = g.coords - np.asarray(g.origin)
    if holes.size == 0:
        return InjectiveHoleMap(n, m, alpha, floor, 4.0 * n**alpha, math.log(n) ** (2 * d * d), variant, {}, {})

    def key(z):
        return tuple(int(v) for v in z)

    cluster_by_box = {}
    for v, z in zip(cluster, subbox_index(rel[cluster], m)):
        cluster_by_box.setdefault(key(z), []).append(int(v))
    mapping = {}
    for zkey in sorted({key(z) for z in subbox_index(rel[holes], m)}):
        hv = [int(v) for v, z in zip(holes, subbox_index(rel[holes], m)) if key(z) == zkey]
        cv = np.array(cluster_by_box.get(zkey, []), dtype=np.int64)
        if len(hv) > cv.size:
            raise HoleMapInfeasibleError(
                f"sub-box {zkey} (m={m}) holds {len(hv)} hole vertices but only {cv.size} giant vertices",
                subbox=zkey,
            )
        used = np.zeros(cv.size, dtype=bool)
        for x in hv:
            dist = np.abs(rel[cv] - rel[x]).sum(axis=1).astype(float)
            dist[used] = np.inf
            j = int(np.argmin(dist))  # cv is in id order, so ties go to the lexicographically first vertex
            used[j] = True
            mapping[x] = int(cv[j])

    good_slot = env.neighbor_conductances > floor
    cluster_slot = good_slot & dec.open_edges[g.incident]
    everywhere = np.ones(g.num_vertices, dtype=bool)
    certs = {}
    for x, y in mapping.items():
        if variant is Speed.CSRW:
            lo, hi = g.indptr[x], g.indptr[x + 1]
            w = env.neighbor_conductances[lo:hi]
            j = lo + int(np.argmax(w))
            e = (int(x), int(g.neighbors[j]))
            sources = np.array(sorted(e), dtype=np.int64)
        else:
            e = None
            sources = np.array([x], dtype=np.int64)
        parent, hit = bfs(g.indptr, g.neighbors, good_slot, sources, giant, everywhere)
        if hit < 0:
            raise HoleMapInfeasibleError(f"no good path from hole vertex {g.point(x)} to the giant cluster")
        first = _trace(parent, hit)
        target = np.zeros(g.num_vertices, dtype=bool)
        target[y] = True
        parent, hit2 = bfs(g.indptr, g.neighbors, cluster_slot, np.array([hit]), target, giant)
        if hit2 < 0:
            raise HoleMapInfeasibleError(f"giant vertex {g.point(y)} unreachable through edges above the floor")
        path = tuple(first[:-1] + _trace(parent, hit2))
        wmin = min((env.conductances[g.edge_index(a, b)] for a, b in zip(path[:-1], path[1:])), default=math.inf)
        certs[x] = Certificate(int(x), int(y), e, path, float(wmin))
    return InjectiveHoleMap(n, m, alpha, floor, 4.0 * n**alpha, math.log(n) ** (2 * d * d), variant, mapping, certs)


def validate_hole_map(hmap, dec):
    """Re-check every stored property of a hole map; returns a list of violations (empty if valid)."""
    env = dec.env
    g = env.graph
    giant = dec.giant_mask
    problems = []
    images = list(hmap.mapping.values())
    if len(set(images)) != len(images):
        problems.append("map is not injective")
    rel = g.coords - np.asarray(g.origin)
    for x, y in hmap.mapping.items():
        if not giant[y]:
            problems.append(f"image of {g.point(x)} is outside the giant cluster")
        if not dec.hole_mask[x]:
            problems.append(f"{g.point(x)} is not a hole vertex")
        if np.any(subbox_index(rel[x], hmap.m) != subbox_index(rel[y], hmap.m)):
            problems.append(f"{g.point(x)} mapped outside its sub-box")
        cert = hmap.certificates.get(x)
        if cert is None:
            problems.append(f"{g.point(x)} has no certificate")
            continue
        p = cert.path
        if p[-1] != y:
            problems.append(f"certificate of {g.point(x)} does not end at its image")
        if hmap.variant is Speed.CSRW:
            if cert.start_edge is None or p[0] not in cert.start_edge or x not in cert.start_edge:
                problems.append(f"certificate of {g.point(x)} does not start on its incident edge")
        elif p[0] != x:
            problems.append(f"certificate of {g.point(x)} does not start at the vertex")
        if cert.length > hmap.length_bound:
            problems.append(f"certificate of {g.point(x)} is too long")
        wmin = math.inf
        for a, b in zip(p[:-1], p[1:]):
            if np.abs(rel[a] - rel[b]).sum() != 1:
                problems.append(f"certificate of {g.point(x)} has a non-adjacent step")
                break
            w = env.conductances[g.edge_index(a, b)]
            wmin = min(wmin, w)
            if not (w > hmap.floor and 1.0 / w < hmap.bound_inverse):
                problems.append(f"certificate of {g.point(x)} crosses an edge below the floor")
                break
        if wmin != cert.min_conductance:
            problems.append(f"certificate of {g.point(x)} stores a wrong minimum conductance")
    return problems
