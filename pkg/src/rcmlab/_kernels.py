"""Compiled inner loops: union-find labeling, the event-driven walk, FNV-1a."""

import numpy as np
from numba import njit

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

REASON_HORIZON = 0
REASON_STOP_SET = 1
REASON_FROZEN = 2
REASON_MAX_JUMPS = 3


@njit(cache=True)
def _find(parent, x):
    # path halving
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def union_find_roots(n_vertices, u, v, active):
    """Component root of every vertex; the root is the smallest vertex id in its component."""
    parent = np.arange(n_vertices)
    for i in range(u.shape[0]):
        if active[i]:
            a = _find(parent, u[i])
            b = _find(parent, v[i])
            if a != b:
                if a < b:
                    parent[b] = a
                else:
                    parent[a] = b
    roots = np.empty(n_vertices, dtype=np.int64)
    for x in range(n_vertices):
        roots[x] = _find(parent, x)
    return roots


@njit(cache=True)
def fnv1a64(data):
    h = np.uint64(FNV_OFFSET)
    p = np.uint64(FNV_PRIME)
    for i in range(data.shape[0]):
        h = h ^ np.uint64(data[i])
        h = h * p
    return h


@njit(cache=True)
def walk_path(indptr, nbr, cumprob, rate, x0, horizon, stop_mask, stop_mode, rng, max_jumps):
    """Exact CTMC path.

    stop_mode: 0 ignore stop_mask, 1 stop on leaving the masked set, 2 stop on entering it.
    Returns (jump_times, states, reason, end_time) with len(states) == len(jump_times) + 1.
    """
    cap = 64
    times = np.empty(cap, dtype=np.float64)
    states = np.empty(cap + 1, dtype=np.int64)
    states[0] = x0
    t = 0.0
    k = 0
    reason = REASON_HORIZON
    if stop_mode == 1 and not stop_mask[x0]:
        return times[:0], states[:1], REASON_STOP_SET, 0.0
    if stop_mode == 2 and stop_mask[x0]:
        return times[:0], states[:1], REASON_STOP_SET, 0.0
    while True:
        if k >= max_jumps:
            reason = REASON_MAX_JUMPS
            break
        x = states[k]
        r = rate[x]
        lo = indptr[x]
        hi = indptr[x + 1]
        if r <= 0.0 or lo == hi:
            reason = REASON_FROZEN
            t = horizon
            break
        hold = rng.standard_exponential() / r
        if t + hold > horizon:
            reason = REASON_HORIZON
            t = horizon
            break
        t += hold
        w = rng.random()
        j = lo
        while j < hi - 1 and w >= cumprob[j]:
            j += 1
        y = nbr[j]
        if k + 1 >= cap:
            new_times = np.empty(2 * cap, dtype=np.float64)
            new_states = np.empty(2 * cap + 1, dtype=np.int64)
            new_times[:k] = times[:k]
            new_states[: k + 1] = states[: k + 1]
            times = new_times
            states = new_states
            cap *= 2
        times[k] = t
        k += 1
        states[k] = y
        if stop_mode == 1 and not stop_mask[y]:
            reason = REASON_STOP_SET
            break
        if stop_mode == 2 and stop_mask[y]:
            reason = REASON_STOP_SET
            break
    return times[:k], states[: k + 1], reason, t


@njit(cache=True)
def point_at(indptr, nbr, cumprob, rate, x0, t_end, rng):
    """State at time t_end only; no path storage."""
    x = x0
    t = 0.0
    while True:
        r = rate[x]
        lo = indptr[x]
        hi = indptr[x + 1]
        if r <= 0.0 or lo == hi:
            return x
        t += rng.standard_exponential() / r
        if t > t_end:
            return x
        w = rng.random()
        j = lo
        while j < hi - 1 and w >= cumprob[j]:
            j += 1
        x = nbr[j]


@njit(cache=True)
def bfs(indptr, nbr, slot_ok, sources, target_mask, allowed):
    """Multi-source BFS over adjacency slots with slot_ok set, visiting allowed vertices.

    Returns (parent, hit): parent[v] = -1 for sources, -2 if unvisited; hit is the
    first target reached (-1 if none). Sources are scanned in the given order and
    neighbours in CSR order, so the result is deterministic.
    """
    nv = indptr.shape[0] - 1
    parent = np.full(nv, -2, dtype=np.int64)
    queue = np.empty(nv, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if parent[s] == -2:
            parent[s] = -1
            queue[tail] = s
            tail += 1
            if target_mask[s]:
                return parent, s
    while head < tail:
        x = queue[head]
        head += 1
        for j in range(indptr[x], indptr[x + 1]):
            if not slot_ok[j]:
                continue
            y = nbr[j]
            if parent[y] != -2 or not allowed[y]:
                continue
            parent[y] = x
            if target_mask[y]:
                return parent, y
            queue[tail] = y
            tail += 1
    return parent, -1


@njit(cache=True)
def occupation(indptr, nbr, cumprob, rate, x0, t_end, occ_mask, domain_mask, rng):
    """Time spent in occ_mask up to t_end, stopping early on leaving domain_mask.

    Returns (occupied_time, exit_time, final_state); exit_time is inf if the walk
    stays in the domain up to t_end.
    """
    x = x0
    t = 0.0
    occ = 0.0
    if not domain_mask[x]:
        return 0.0, 0.0, x
    while True:
        r = rate[x]
        lo = indptr[x]
        hi = indptr[x + 1]
        if r <= 0.0 or lo == hi:
            hold = t_end - t
        else:
            hold = rng.standard_exponential() / r
        if t + hold >= t_end:
            if occ_mask[x]:
                occ += t_end - t
            return occ, np.inf, x
        if occ_mask[x]:
            occ += hold
        t += hold
        w = rng.random()
        j = lo
        while j < hi - 1 and w >= cumprob[j]:
            j += 1
        x = nbr[j]
        if not domain_mask[x]:
            return occ, t, x
