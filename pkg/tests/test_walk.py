import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import random_field
from rcmlab import environment as envmod
from rcmlab.environment import MeasureKind, Speed
from rcmlab.errors import EmptyTimeChangeError, InvalidArgumentError
from rcmlab.lattice import MetricKind, ball, build_box
from rcmlab.operators import Boundary
from rcmlab.percolation import decompose
from rcmlab.semigroup import heat_kernel, solve_poisson
from rcmlab.walk import (
    ESTIMATE_COLUMNS,
    Estimand,
    TerminalReason,
    Trajectory,
    endpoints,
    estimate,
    functional,
    simulate,
    time_change,
    write_estimates,
)


def test_zero_horizon(unit_env):
    tr = simulate(unit_env(), x0=3, horizon=0.0)
    assert tr.num_jumps == 0 and list(tr.states) == [3] and tr.reason is TerminalReason.HORIZON


def test_bad_arguments(unit_env):
    env = unit_env()
    with pytest.raises(InvalidArgumentError):
        simulate(env, x0=-1)
    with pytest.raises(InvalidArgumentError):
        simulate(env, horizon=-1.0)
    with pytest.raises(InvalidArgumentError):
        estimate(env, None, "NOPE", {}, 10, 0)
    with pytest.raises(InvalidArgumentError):
        estimate(env, None, Estimand.RETURN, {"x": 0, "t": 1.0}, 0, 0)


def test_single_edge_jump_count():
    g = build_box(1, 1)
    w = np.zeros(g.num_edges)
    a, b = g.index((-1,)), g.index((0,))
    w[g.edge_index(a, b)] = 1.0
    env = envmod.from_array(g, w)
    t, reps = 3.0, 10_000
    paths = [simulate(env, Speed.CSRW, a, t, seed=1, stream=r) for r in range(reps)]
    counts = np.array([p.num_jumps for p in paths])
    assert set(np.concatenate([p.states for p in paths[:50]])) <= {a, b}
    assert abs(counts.mean() - t) <= 3 * np.sqrt(t / reps)


@pytest.mark.parametrize("speed", [Speed.CSRW, Speed.VSRW])
def test_jumps_and_holding_times(speed):
    env = random_field(2, 3, 9)
    g = env.graph
    x0 = g.index((0, 0))
    # long path: jump frequencies out of x0 and holding times at x0
    tr = simulate(env, speed, x0, 4e4 if speed is Speed.CSRW else 4e4 / env.pi.mean(), seed=2)
    states, holds = tr.states[:-1], tr.holding_times[:-1]
    nxt = tr.states[1:]
    steps = np.abs(g.coords[nxt] - g.coords[states]).sum(axis=1)
    assert np.all(steps == 1)
    assert np.all(env.conductances[[g.edge_index(u, v) for u, v in zip(states[:500], nxt[:500])]] > 0)
    busiest = np.bincount(states).argmax()
    sel = states == busiest
    nb = g.neighbors[g.indptr[busiest]:g.indptr[busiest + 1]]
    w = env.neighbor_conductances[g.indptr[busiest]:g.indptr[busiest + 1]]
    obs = np.array([np.sum(nxt[sel] == y) for y in nb])
    chi = stats.chisquare(obs, w / w.sum() * obs.sum())
    assert chi.pvalue > 0.01
    rate = 1.0 if speed is Speed.CSRW else env.pi[busiest]
    ks = stats.kstest(holds[sel], "expon", args=(0, 1.0 / rate))
    assert ks.pvalue > 0.01


@pytest.mark.parametrize("t", [1.0, 4.0])
def test_return_probability_matches_kernel(t):
    env = envmod.sample(build_box(1, 10), envmod.constant(1.0), 0)
    x0 = env.graph.index((0,))
    exact = heat_kernel(env, None, None, Boundary.RESTRICTED, x0, t).at(x0)
    est = estimate(env, Speed.CSRW, Estimand.RETURN, {"x": x0, "t": t}, 10_000, 5)
    # estimate is P(X_t = x) / theta_x; the binomial sigma scales the same way
    p = exact * env.pi[x0]
    assert abs(est.point - exact) <= 3 * np.sqrt(p * (1 - p) / 10_000) / env.pi[x0]


@pytest.mark.parametrize("r", [4, 8])
def test_exit_time_matches_poisson(r):
    g = build_box(1, r + 2)
    env = envmod.sample(g, envmod.polynomial(1.0), r)
    x0 = g.index((0,))
    est = estimate(env, Speed.CSRW, Estimand.EXIT_TIME, {"x": x0, "r": float(r)}, 4000, 3)
    A = ball(g, MetricKind.GRAPH, env, x0, float(r))
    assert est.within(solve_poisson(env, MeasureKind.PI, A, -1.0)[x0])


def test_functional_tail_on_unit_field(unit_env):
    env = unit_env(2, 3)
    dec = decompose(env, 0.5)
    est = estimate(env, None, Estimand.FUNCTIONAL_TAIL, {"x": 0, "t": 5.0, "eps": 0.9, "decomposition": dec}, 200, 0)
    assert est.point == 0.0
    tr = simulate(env, None, 0, 5.0, seed=1)
    fp = functional(tr, dec)
    assert fp(5.0) == pytest.approx(5.0) and fp.tau_h == 0.0
    tc = time_change(tr, fp)
    assert np.array_equal(tc.states, tr.states) and np.allclose(tc.jump_times, tr.jump_times)
    assert tc.seams.size == 0


def _three_site_line():
    # giant cluster {-2, -1, 0}; hole {1, 2}
    g = build_box(1, 2)
    env = envmod.from_array(g, np.array([1.0, 1.0, 0.1, 1.0]))
    dec = decompose(env, 0.5)
    assert list(np.nonzero(dec.giant_mask)[0]) == [0, 1, 2]
    return env, dec


def test_hand_built_functional_and_time_change():
    env, dec = _three_site_line()
    # cluster 1.0 s, hole 2.0 s, cluster 0.5 s
    tr = Trajectory(Speed.CSRW, 2, np.array([1.0, 3.0]), np.array([2, 3, 2]), TerminalReason.HORIZON,
                    3.5, 3.5, (0, 0), env)
    fp = functional(tr, dec)
    assert fp.total == pytest.approx(1.5)
    assert fp(2.0) == pytest.approx(1.0) and fp(3.25) == pytest.approx(1.25)
    tc = time_change(tr, fp)
    assert tc.end_time == pytest.approx(1.5)
    assert list(tc.seams) == [1.0]
    assert np.all(dec.giant_mask[tc.states])


def test_start_in_hole_before_first_jump():
    env, dec = _three_site_line()
    tr = Trajectory(Speed.CSRW, 4, np.array([]), np.array([4]), TerminalReason.HORIZON, 0.7, 0.7, (0, 0), env)
    fp = functional(tr, dec)
    assert fp.total == 0.0 and fp.tau_h_censored and fp.tau_h == pytest.approx(0.7)
    with pytest.raises(EmptyTimeChangeError):
        time_change(tr, fp)


def test_mismatched_environment():
    env, dec = _three_site_line()
    other = envmod.sample(env.graph, envmod.constant(1.0), 0)
    with pytest.raises(InvalidArgumentError):
        functional(simulate(other, None, 0, 1.0), dec)


@given(st.integers(0, 2**32), st.floats(0.05, 0.6))
def test_functional_invariants(seed, xi):
    env = random_field(2, 4, seed)
    dec = decompose(env, xi)
    tr = simulate(env, None, env.graph.index((0, 0)), 20.0, seed=seed)
    fp = functional(tr, dec)
    assert np.all(np.diff(fp.values) >= -1e-12)
    assert np.all(fp.values <= fp.times + 1e-12)
    stayed = dec.giant_mask[tr.states].all()
    assert stayed == (abs(fp.total - tr.end_time) < 1e-12)
    if dec.hole_labels[tr.start] < 0:
        assert fp.tau_h == 0.0
    if fp.total > 0:
        tc = time_change(tr, fp)
        assert np.all(dec.giant_mask[tc.states])
        assert tc.end_time == pytest.approx(fp.total)


def test_stream_reproducibility(rand_env):
    env = rand_env(2, 4, 1)
    a = simulate(env, None, 5, 10.0, seed=3, stream=7)
    b = simulate(env, None, 5, 10.0, seed=3, stream=7)
    c = simulate(env, None, 5, 10.0, seed=3, stream=8)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.states, b.states)
    assert not np.array_equal(a.jump_times[:5], c.jump_times[:5])


def test_reversibility_in_law():
    env = random_field(2, 2, 4)
    g = env.graph
    x, y, t, reps = g.index((0, 0)), g.index((1, 0)), 1.0, 20_000
    pxy = np.mean(endpoints(env, None, x, t, reps, 1) == y)
    pyx = np.mean(endpoints(env, None, y, t, reps, 2) == x)
    lhs, rhs = env.pi[x] * pxy, env.pi[y] * pyx
    se = np.hypot(env.pi[x] * np.sqrt(pxy * (1 - pxy) / reps), env.pi[y] * np.sqrt(pyx * (1 - pyx) / reps))
    assert abs(lhs - rhs) <= 3 * se


def test_estimate_csv(tmp_path, unit_env):
    env = unit_env()
    est = estimate(env, None, Estimand.RETURN, {"x": 0, "t": 1.0}, 50, 0)
    assert est.ci_low <= est.point <= est.ci_high
    path = tmp_path / "est.csv"
    write_estimates(path, [est])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ESTIMATE_COLUMNS) and len(lines) == 2


def test_frozen_walker_under_vsrw():
    g = build_box(1, 1)
    env = envmod.from_array(g, np.zeros(g.num_edges), Speed.VSRW)
    tr = simulate(env, Speed.VSRW, 1, 5.0)
    assert tr.reason is TerminalReason.FROZEN and tr.num_jumps == 0
