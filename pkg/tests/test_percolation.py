import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcmlab import environment as envmod
from rcmlab.environment import Speed
from rcmlab.errors import HoleMapInfeasibleError, InvalidArgumentError
from rcmlab.lattice import boundary, build_box
from rcmlab.percolation import (
    GiantState,
    build_hole_map,
    components_dfs,
    decompose,
    good_path_exists,
    hole_stats,
    subbox_index,
    validate_hole_map,
)


def _ring_env(n=2, closed=0.1):
    g = build_box(2, n)
    w = np.ones(g.num_edges)
    o = g.index((0, 0))
    for j in range(g.indptr[o], g.indptr[o + 1]):
        w[g.incident[j]] = closed
    return envmod.from_array(g, w), o


def _canon(labels):
    # relabel by order of first appearance
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    out = np.empty_like(labels)
    for new, old in enumerate(np.unique(labels)[order]):
        out[labels == old] = new
    return out


def test_unit_field_single_cluster():
    dec = decompose(envmod.sample(build_box(2, 4), envmod.constant(1.0), 0), 0.5)
    assert dec.num_clusters == 1 and len(dec.holes) == 0 and dec.state is GiantState.SPANNING
    assert dec.density() == 1.0


def test_no_open_edges_flagged():
    dec = decompose(envmod.sample(build_box(2, 3), envmod.constant(0.1), 0), 0.5)
    assert dec.num_clusters == 49
    assert dec.giant is None and dec.state is GiantState.NONE and dec.flagged
    assert dec.hole_mask.all()


def test_ring_around_origin_is_a_point_hole():
    env, o = _ring_env()
    dec = decompose(env, 0.5)
    assert dec.state is GiantState.SPANNING
    assert len(dec.holes) == 1
    h = dec.hole_of(o)
    assert list(h.vertices) == [o] and h.diameter == 0 and not h.touches_boundary
    ref = components_dfs(env.graph, env.conductances >= 0.5)
    assert np.array_equal(_canon(ref), _canon(dec.labels))


def test_bad_threshold():
    env, _ = _ring_env()
    with pytest.raises(InvalidArgumentError):
        decompose(env, 0.0)


@given(st.integers(1, 3), st.integers(1, 7), st.floats(0.2, 0.8), st.integers(0, 2**32))
def test_union_find_matches_dfs(d, n, p, seed):
    g = build_box(d, n)
    if g.num_vertices > 500:
        return
    env = envmod.sample(g, envmod.bernoulli(p), seed)
    dec = decompose(env, 0.5)
    ref = components_dfs(g, env.conductances >= 0.5)
    assert np.array_equal(_canon(ref), _canon(dec.labels))
    # canonical labels are already ordered by smallest member
    assert np.array_equal(_canon(dec.labels), dec.labels)


@given(st.integers(2, 8), st.floats(0.5, 0.9), st.integers(0, 2**32))
def test_holes_partition_complement_and_touch_giant(n, p, seed):
    g = build_box(2, n)
    dec = decompose(envmod.sample(g, envmod.bernoulli(p), seed), 0.5)
    giant = dec.giant_mask
    covered = np.zeros(g.num_vertices, dtype=int)
    for k, h in enumerate(dec.holes):
        covered[h.vertices] += 1
        assert np.all(dec.hole_labels[h.vertices] == k)
        c = g.coords[h.vertices]
        assert h.diameter == int((c.max(axis=0) - c.min(axis=0)).max())
        if not h.touches_boundary and dec.giant is not None:
            outer = np.setdiff1d(boundary(g, h.vertices, closure=True), h.vertices)
            assert giant[outer].all()
    assert np.array_equal(covered == 1, ~giant)


def test_holes_shrink_with_threshold():
    env = envmod.sample(build_box(2, 10), envmod.polynomial(1.0), 4)
    big, small = decompose(env, 0.3), decompose(env, 0.1)
    assert np.all(small.hole_mask <= big.hole_mask)


def test_hole_stats_unit_field():
    g = build_box(2, 4)
    table = hole_stats((envmod.sample(g, envmod.constant(1.0), s) for s in range(3)), 0.5)
    assert all(r.count == 0 for r in table.rows) and table.finite_cluster.count == 0


def test_hole_stats_needs_samples():
    with pytest.raises(InvalidArgumentError):
        hole_stats(iter(()), 0.5)


def test_hole_stats_csv(tmp_path):
    g = build_box(2, 4)
    table = hole_stats((envmod.sample(g, envmod.bernoulli(0.7), s) for s in range(20)), 0.5, window=2)
    path = tmp_path / "tail.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,count,tail_estimate,ci_low,ci_high"
    assert len(lines) == 1 + len(table.rows)


def _giant_rule(g, labels):
    """Independent statement of the giant-proxy rule for small boxes."""
    c = g.coords - np.asarray(g.origin)
    ids, sizes = np.unique(labels, return_counts=True)
    span = [k for k, s in zip(ids, sizes) if s > 1 and any(
        (c[labels == k, a] == -g.n).any() and (c[labels == k, a] == g.n).any() for a in range(g.d))]
    if span:
        return max(span, key=lambda k: (np.sum(labels == k), -k))
    if sizes.max() == 1:
        return int(ids[0]) if len(ids) else None
    return int(ids[np.argmax(sizes)])


def exact_finite_cluster_probability(p):
    """Sum over all 2^12 bond configurations of [-1, 1]^2 of P(config) 1{origin not in the giant}."""
    g = build_box(2, 1)
    o = g.index((0, 0))
    total = 0.0
    for bits in itertools.product((0, 1), repeat=g.num_edges):
        is_open = np.array(bits, dtype=bool)
        k = int(is_open.sum())
        labels = components_dfs(g, is_open)
        if not is_open.any():
            outside = True
        else:
            outside = labels[o] != _giant_rule(g, labels)
        if outside:
            total += p**k * (1 - p) ** (g.num_edges - k)
    return total


@pytest.mark.parametrize("p", [0.6, 0.8])
def test_finite_cluster_probability_matches_enumeration(p):
    exact = exact_finite_cluster_probability(p)
    g = build_box(2, 1)
    trials = 20_000
    table = hole_stats((envmod.sample(g, envmod.bernoulli(p), s) for s in range(trials)), 0.5)
    est = table.finite_cluster.tail_estimate
    assert abs(est - exact) <= 3 * np.sqrt(exact * (1 - exact) / trials)


@pytest.mark.parametrize("n", [32, 64])
def test_density_lower_bound(n):
    g = build_box(2, n)
    good = sum(decompose(envmod.sample(g, envmod.bernoulli(0.95), s), 0.5).density() >= 0.6 for s in range(100))
    assert good >= 95


def test_good_path_unit_field():
    env = envmod.sample(build_box(2, 4), envmod.constant(1.0), 0)
    g = env.graph
    found, path = good_path_exists(env, g.index((0, 0)), 1.0, 3)
    assert found and len(path) == 4
    steps = np.abs(np.diff(g.coords[path], axis=0)).sum(axis=1)
    assert np.all(steps == 1)
    assert np.all(np.diff(g.coords[path], axis=0) == np.diff(g.coords[path], axis=0)[0])


def test_good_path_absent_below_floor():
    env = envmod.sample(build_box(2, 4), envmod.constant(0.01), 0)
    g = env.graph
    assert good_path_exists(env, g.index((0, 0)), 1.0, 3) == (False, None)


def test_good_path_follows_corridor():
    g = build_box(2, 4)
    w = np.full(g.num_edges, 1e-3)
    corridor = [g.index((0, k)) for k in range(4)]
    for a, b in zip(corridor[:-1], corridor[1:]):
        w[g.edge_index(a, b)] = 1.0
    env = envmod.from_array(g, w)
    found, path = good_path_exists(env, (g.index((1, 0)), corridor[0]), 1.0, 3)
    assert found and path == corridor


def test_hole_map_empty_without_holes():
    env = envmod.sample(build_box(2, 6), envmod.constant(1.0), 0)
    hmap = build_hole_map(decompose(env, 0.5), 1.0, 2, 3)
    assert len(hmap) == 0 and validate_hole_map(hmap, decompose(env, 0.5)) == []


@pytest.mark.parametrize("variant", [Speed.CSRW, Speed.VSRW])
def test_hole_map_single_hole(variant):
    env, o = _ring_env(n=6, closed=0.3)
    dec = decompose(env, 0.5)
    hmap = build_hole_map(dec, 1.0, 1, 3, variant)
    assert list(hmap.mapping) == [o]
    cert = hmap.certificates[o]
    g = env.graph
    assert dec.giant_mask[cert.image]
    assert np.array_equal(subbox_index(g.coords[o], 1), subbox_index(g.coords[cert.image], 1))
    assert cert.path[-1] == cert.image
    if variant is Speed.VSRW:
        assert cert.path[0] == o and cert.length >= 1
    else:
        assert cert.path[0] in cert.start_edge and o in cert.start_edge
    assert validate_hole_map(hmap, dec) == []


def test_hole_map_infeasible_subbox():
    g = build_box(2, 6)
    w = np.ones(g.num_edges)
    # close every edge touching the 3x3 block around the origin
    block = np.nonzero(g.sup_norm() <= 1)[0]
    touch = np.isin(g.edges[:, 0], block) | np.isin(g.edges[:, 1], block)
    w[touch] = 0.3
    dec = decompose(envmod.from_array(g, w), 0.5)
    with pytest.raises(HoleMapInfeasibleError) as info:
        build_hole_map(dec, 1.0, 1, 3)
    assert info.value.subbox == (0, 0)


@given(st.integers(0, 2**32), st.sampled_from([Speed.CSRW, Speed.VSRW]))
def test_hole_maps_revalidate(seed, variant):
    env = envmod.sample(build_box(2, 16), envmod.polynomial(1.0), seed)
    dec = decompose(env, 0.25)
    try:
        hmap = build_hole_map(dec, 1.0, 3, 8, variant)
    except HoleMapInfeasibleError:
        return
    assert validate_hole_map(hmap, dec) == []
    assert len(set(hmap.mapping.values())) == len(hmap)
