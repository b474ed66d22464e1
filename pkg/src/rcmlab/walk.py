"""Exact continuous-time random walks, the occupation functional A(t) and its time change."""

from __future__ import annotations

import csv
import enum
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .environment import Speed
from .errors import EmptyTimeChangeError, InvalidArgumentError
from .lattice import MetricKind, ball
from .rng import replica_generator
from .stats import mean_interval, wilson_interval


class TerminalReason(enum.Enum):
    HORIZON = "horizon"
    STOP_SET = "stop_set"
    FROZEN = "frozen"
    MAX_JUMPS = "max_jumps"


_REASONS = {
    _kernels.REASON_HORIZON: TerminalReason.HORIZON,
    _kernels.REASON_STOP_SET: TerminalReason.STOP_SET,
    _kernels.REASON_FROZEN: TerminalReason.FROZEN,
    _kernels.REASON_MAX_JUMPS: TerminalReason.MAX_JUMPS,
}


@dataclass(frozen=True)
class WalkTables:
    indptr: np.ndarray
    neighbors: np.ndarray
    cumprob: np.ndarray
    rate: np.ndarray


@functools.lru_cache(maxsize=16)
def walk_tables(env, speed):
    """CSR jump tables: cumulative omega_xy / pi(x) over sorted neighbours and holding rates."""
    g = env.graph
    w = np.asarray(env.neighbor_conductances, dtype=float)
    pi = np.asarray(env.pi)
    src = np.repeat(np.arange(g.num_vertices), g.degree)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(pi[src] > 0, w / pi[src], 0.0)
    cum = np.cumsum(p)
    starts = g.indptr[:-1]
    offset = np.repeat(np.concatenate([[0.0], cum])[starts], g.degree)
    cum = cum - offset
    # every slot from the last positive-weight neighbour onwards reads as 1, so
    # rounding in the cumulative sum can never select a zero-conductance edge
    slot = np.arange(p.size)
    last = np.maximum.reduceat(np.where(p > 0, slot, -1), starts)
    cum[slot >= np.repeat(last, g.degree)] = 1.0
    if Speed(speed) is Speed.CSRW:
        rate = np.where(pi > 0, 1.0, 0.0)
    else:
        rate = pi.copy()
    return WalkTables(g.indptr, np.asarray(g.neighbors), cum, rate)


@dataclass(frozen=True)
class Trajectory:
    """A sample path: states[k] is occupied on [jump_times[k-1], jump_times[k])."""

    speed: Speed
    start: int
    jump_times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    reason: TerminalReason
    end_time: float
    horizon: float
    stream: tuple = (0, 0)
    env: object = field(default=None, repr=False, compare=False)
    seams: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_jumps(self):
        return int(self.jump_times.size)

    @property
    def breakpoints(self):
        """0, the jump times and the end time."""
        return np.concatenate([[0.0], self.jump_times, [self.end_time]])

    @property
    def holding_times(self):
        return np.diff(self.breakpoints)

    def position(self, t):
        if t < 0 or t > self.end_time:
            raise InvalidArgumentError("time outside the simulated window")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return int(self.states[k])


def _resolve_speed(env, speed):
    return env.speed if speed is None else Speed(speed)


def simulate(env, speed=None, x0=0, horizon=1.0, stop_set=None, stop_mode="exit", seed=0, stream=0, max_jumps=10**8):
    """Exact CTMC path from x0 up to the horizon.

    ``stop_mode`` is "exit" (stop on the first jump out of stop_set) or
    "enter" (stop on the first jump into it). CSRW holds at rate 1 and VSRW at
    rate pi(x); both jump to y with probability omega_xy / pi(x). A vertex with
    pi(x) = 0 freezes the walker (reason FROZEN).
    """
    speed = _resolve_speed(env, speed)
    g = env.graph
    if not 0 <= x0 < g.num_vertices:
        raise InvalidArgumentError("start vertex outside the box")
    if horizon < 0 or math.isnan(horizon):
        raise InvalidArgumentError("horizon must be nonnegative")
    tab = walk_tables(env, speed)
    mask = np.zeros(g.num_vertices, dtype=bool)
    mode = 0
    if stop_set is not None:
        mask[np.asarray(stop_set, dtype=np.int64)] = True
        mode = {"exit": 1, "enter": 2}[stop_mode]
    rng = replica_generator(seed, stream)
    times, states, reason, end = _kernels.walk_path(
        tab.indptr, tab.neighbors, tab.cumprob, tab.rate, int(x0), float(horizon), mask, mode, rng, int(max_jumps)
    )
    return Trajectory(speed, int(x0), times.copy(), states.copy(), _REASONS[reason], float(end), float(horizon), (int(seed), int(stream)), env)


@dataclass(frozen=True)
class FunctionalPath:
    """A(t) = time spent in the giant cluster up to t, as a piecewise-linear function."""

    trajectory: Trajectory = field(repr=False)
    xi: float
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    tau_h: float
    tau_h_censored: bool

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    @property
    def total(self):
        return float(self.values[-1])


def functional(traj, dec):
    """Occupation functional of the giant cluster and the exit time tau_h from the starting hole."""
    if traj.env is not None and dec.env is not traj.env:
        same = dec.env.graph is traj.env.graph and np.array_equal(dec.env.conductances, traj.env.conductances)
        if not same:
            raise InvalidArgumentError("decomposition and trajectory come from different environments")
    giant = dec.giant_mask
    bp = traj.breakpoints
    slope = giant[traj.states].astype(float)
    values = np.concatenate([[0.0], np.cumsum(slope * np.diff(bp))])
    hole = dec.hole_labels[traj.start]
    if hole < 0:
        tau, censored = 0.0, False
    else:
        out = np.nonzero(dec.hole_labels[traj.states] != hole)[0]
        if out.size:
            tau, censored = float(traj.jump_times[out[0] - 1]), False
        else:
            tau, censored = float(traj.end_time), True
    return FunctionalPath(traj, dec.threshold, bp, values, tau, censored)


def time_change(traj, fp):
    """X^xi_t = X_{A^{-1}(t)}: the path with all hole visits cut out, run on the A clock.

    The result is a Trajectory whose duration is A(end); ``seams`` holds the
    A-times at which an excursion into the holes was removed.
    """
    if fp.total <= 0:
        raise EmptyTimeChangeError("A vanishes on the whole path")
    keep = np.nonzero(np.diff(fp.values) > 0)[0]
    states = traj.states[keep]
    a_start = fp.values[keep]
    jumps, new_states, seams = [], [int(states[0])], []
    for k in range(1, keep.size):
        if keep[k] != keep[k - 1] + 1:
            seams.append(float(a_start[k]))
        if states[k] != new_states[-1]:
            jumps.append(float(a_start[k]))
            new_states.append(int(states[k]))
    return Trajectory(
        traj.speed, int(new_states[0]), np.array(jumps), np.array(new_states, dtype=np.int64), traj.reason,
        fp.total, fp.total, traj.stream, traj.env, np.array(seams),
    )


class Estimand(enum.Enum):
    RETURN = "RETURN"
    FUNCTIONAL_TAIL = "FUNCTIONAL_TAIL"
    HOLE_EXIT = "HOLE_EXIT"
    EXIT_TIME = "EXIT_TIME"
    FEYNMAN_KAC = "FEYNMAN_KAC"


@dataclass(frozen=True)
class Estimate:
    estimand: Estimand
    params: dict
    point: float
    ci_low: float
    ci_high: float
    replicas: int
    seed: int
    stderr: float
    extras: dict = field(default_factory=dict)

    def within(self, value, k=3.0, floor=0.0):
        """|point - value| <= k standard errors (plus an additive floor)."""
        return abs(self.point - value) <= k * self.stderr + floor

    def csv_row(self):
        return [self.estimand.value, json.dumps(self.params, sort_keys=True), repr(self.point), repr(self.ci_low),
                repr(self.ci_high), self.replicas, self.seed]


ESTIMATE_COLUMNS = ["estimand", "params", "point", "ci_low", "ci_high", "replicas", "seed"]


def write_estimates(path, estimates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_COLUMNS)
        for e in estimates:
            w.writerow(e.csv_row())


def _proportion(estimand, params, hits, replicas, seed, scale=1.0, extras=None):
    lo, hi = wilson_interval(hits, replicas)
    p = hits / replicas
    se = math.sqrt(max(p * (1 - p), 0.25 / replicas) / replicas)
    return Estimate(estimand, params, p * scale, lo * scale, hi * scale, replicas, seed, se * scale, extras or {})


def endpoints(env, speed, x0, t, replicas, seed, first_stream=0):
    """X_t for independent replicas (stream first_stream + r for replica r)."""
    speed = _resolve_speed(env, speed)
    tab = walk_tables(env, speed)
    out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        rng = replica_generator(seed, first_stream + r)
        out[r] = _kernels.point_at(tab.indptr, tab.neighbors, tab.cumprob, tab.rate, int(x0), float(t), rng)
    return out


def occupation_samples(env, speed, x0, t, occ_mask, domain_mask, replicas, seed, first_stream=0):
    """(time in occ_mask up to t, exit time from domain_mask or inf, final state) per replica."""
    speed = _resolve_speed(env, speed)
    tab = walk_tables(env, speed)
    occ = np.empty(replicas)
    ext = np.empty(replicas)
    fin = np.empty(replicas, dtype=np.int64)
    occ_mask = np.asarray(occ_mask, dtype=bool)
    domain_mask = np.asarray(domain_mask, dtype=bool)
    for r in range(replicas):
        rng = replica_generator(seed, first_stream + r)
        occ[r], ext[r], fin[r] = _kernels.occupation(
            tab.indptr, tab.neighbors, tab.cumprob, tab.rate, int(x0), float(t), occ_mask, domain_mask, rng
        )
    return occ, ext, fin


def exit_times(env, speed, x0, region, replicas, seed, first_stream=0, horizon=math.inf):
    """First exit times from a vertex set (inf if the horizon is reached first)."""
    g = env.graph
    mask = np.zeros(g.num_vertices, dtype=bool)
    mask[np.asarray(region, dtype=np.int64)] = True
    return occupation_samples(env, speed, x0, horizon, mask, mask, replicas, seed, first_stream)[1]


def estimate(env, speed, estimand, params, replicas, seed):
    """Monte Carlo estimate with a 95% interval (Wilson for probabilities, normal for means).

    params by estimand:
      RETURN:          x, t                    -> P(X_t = x) / theta_x
      FUNCTIONAL_TAIL: x, t, eps, decomposition -> P(A(t) <= eps t)
      HOLE_EXIT:       x, t, decomposition     -> P(tau_h >= t / 2)
      EXIT_TIME:       x and r (graph ball B(x, r)) or region -> E[tau]
      FEYNMAN_KAC:     x, t, lam, decomposition, region, f (optional, on all vertices)
                       -> E[f(X_t) exp(-lam A(t)); tau_region > t]
    """
    if replicas < 1:
        raise InvalidArgumentError("replicas must be at least 1")
    try:
        estimand = Estimand(estimand)
    except ValueError as exc:
        raise InvalidArgumentError(f"unknown estimand {estimand!r}") from exc
    speed = _resolve_speed(env, speed)
    g = env.graph
    p = dict(params)
    x = int(p.get("x", 0))
    public = {k: v for k, v in p.items() if k not in ("decomposition", "region", "f")}
    public["speed"] = speed.value
    if "decomposition" in p:
        public["xi"] = p["decomposition"].threshold
    everywhere = np.ones(g.num_vertices, dtype=bool)
    if estimand is Estimand.RETURN:
        t = float(p["t"])
        ends = endpoints(env, speed, x, t, replicas, seed)
        theta = env.pi[x] if speed is Speed.CSRW else 1.0
        return _proportion(estimand, public, int(np.sum(ends == x)), replicas, seed, 1.0 / theta)
    if estimand is Estimand.FUNCTIONAL_TAIL:
        dec = p["decomposition"]
        t, eps = float(p["t"]), float(p["eps"])
        occ, _, _ = occupation_samples(env, speed, x, t, dec.giant_mask, everywhere, replicas, seed)
        return _proportion(estimand, public, int(np.sum(occ <= eps * t)), replicas, seed)
    if estimand is Estimand.HOLE_EXIT:
        dec = p["decomposition"]
        t = float(p["t"])
        h = dec.hole_labels[x]
        if h < 0:
            return _proportion(estimand, public, 0, replicas, seed, extras={"start_in_hole": False})
        region = dec.holes[h].vertices
        ext = exit_times(env, speed, x, region, replicas, seed, horizon=t / 2)
        return _proportion(estimand, public, int(np.sum(~(ext < t / 2))), replicas, seed, extras={"start_in_hole": True})
    if estimand is Estimand.EXIT_TIME:
        region = p.get("region")
        if region is None:
            region = ball(g, MetricKind.GRAPH, env, x, float(p["r"]))
        ext = exit_times(env, speed, x, region, replicas, seed)
        m, se, lo, hi = mean_interval(ext)
        return Estimate(estimand, public, m, lo, hi, replicas, seed, se)
    if estimand is Estimand.FEYNMAN_KAC:
        dec = p["decomposition"]
        t, lam = float(p["t"]), float(p["lam"])
        dom = np.zeros(g.num_vertices, dtype=bool)
        dom[np.asarray(p["region"], dtype=np.int64)] = True
        f = np.asarray(p.get("f", np.ones(g.num_vertices)), dtype=float)
        occ, ext, fin = occupation_samples(env, speed, x, t, dec.giant_mask, dom, replicas, seed)
        vals = np.where(np.isinf(ext), f[fin] * np.exp(-lam * occ), 0.0)
        m, se, lo, hi = mean_interval(vals)
        return Estimate(estimand, public, m, lo, hi, replicas, seed, se)
    raise InvalidArgumentError(f"unknown estimand {estimand!r}")
