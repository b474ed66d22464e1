"""Exit times, volume growth, minimal conductances, Harnack ratios and oscillation decay."""

from __future__ import annotations

import enum
import math

import numpy as np

from .. import environment as envmod
from ..environment import measure_of_ball
from ..errors import InvalidArgumentError
from ..lattice import MetricKind, ball, boundary, build_box
from ..operators import Boundary, generator
from ..rng import generator as rng_generator
from ..semigroup import caloric_evolve, harmonic_extension, solve_poisson
from ..stats import fit_line, mean_interval
from ..walk import exit_times
from .report import FitReport


class HarnackMode(enum.Enum):
    ELLIPTIC = "ELLIPTIC"
    PARABOLIC = "PARABOLIC"


def exit_time_profile(env, measure, x0, radii):
    """E^{x0}[tau_{B(x0, r)}] for each r (graph-metric balls), by the Poisson solve with f = -1."""
    out = []
    for r in radii:
        A = ball(env.graph, MetricKind.GRAPH, env, x0, r)
        if A.size >= env.graph.num_vertices or np.any(env.graph.sup_norm()[A] >= env.graph.n):
            raise InvalidArgumentError(f"ball of radius {r} reaches the edge of the sampled box")
        u = solve_poisson(env, measure, A, -1.0)
        out.append(float(u[x0]))
    return np.array(out)


def min_conductance_slope(gamma, d, n_grid, seeds):
    """Per-seed slopes of log min_{e in B_n} omega_e against log n (nested boxes of one field)."""
    n_grid = sorted(int(n) for n in n_grid)
    g = build_box(d, n_grid[-1])
    reach = np.maximum(g.sup_norm()[g.edges[:, 0]], g.sup_norm()[g.edges[:, 1]])
    slopes, mins = [], []
    for s in seeds:
        w = envmod.edge_values(envmod.polynomial(gamma), s, 0, g.num_edges)
        m = [float(w[reach <= n].min()) for n in n_grid]
        mins.append(m)
        slopes.append(fit_line(np.log(n_grid), np.log(m)).slope)
    return np.array(slopes), np.array(mins)


def fontes_mathieu_check(gamma, d, n_grid, seeds, rel_tol=0.15):
    slopes, mins = min_conductance_slope(gamma, d, n_grid, seeds)
    mean, se, _, _ = mean_interval(slopes)
    target = -d / gamma
    passed = abs(mean - target) <= rel_tol * abs(target)
    return FitReport(
        "min-conductance scaling", {"slope": mean, "slope_se": se, "target": target},
        {"rel_tol": rel_tol}, passed,
        {"gamma": gamma, "d": d, "n_grid": list(n_grid), "seeds": list(seeds)},
        [{"seed": s, "slope": float(sl)} for s, sl in zip(seeds, slopes)],
    )


def assumption_suite(env, measure, x0, radii, factor=1.25, gamma=None, kappa_tol=0.2, mc_replicas=0, seed=0):
    """Exit-time, volume and minimal-conductance checks around x0.

    * c r^2 <= E[tau_{B(x0, r)}] <= C r^2: max/min of E[tau] / r^2 over radii <= factor.
    * theta(B(x0, R)) ~ R^d: exponent fitted against the side length 2R + 1.
    * kappa: slopes of the minimal edge conductance and of the minimal pi over
      B(x0, R) against log R; the edge exponent is compared with d / gamma.
    * optional Monte Carlo exit-time tail P(tau_{B(x0, rho)} <= t), fitted
      against exp(-c rho^2 / t).
    """
    g = env.graph
    radii = np.asarray(radii, dtype=float)
    if radii.max() > g.n / 4 + 1e-9:
        raise InvalidArgumentError("largest radius exceeds a quarter of the box")
    measure_obj = env.measure(measure) if not hasattr(measure, "values") else measure
    et = exit_time_profile(env, measure_obj, x0, radii)
    scaled = et / radii**2
    stab = float(scaled.max() / scaled.min())
    vol = np.array([measure_of_ball(env, measure_obj, x0, int(r)) for r in radii])
    # against the side length 2R + 1 the counting-measure exponent is exactly d
    vol_fit = fit_line(np.log(2 * radii + 1), np.log(vol))
    c0 = g.coords[x0]
    reach = np.maximum(np.abs(g.coords[g.edges[:, 0]] - c0).max(axis=1), np.abs(g.coords[g.edges[:, 1]] - c0).max(axis=1))
    min_w = np.array([env.conductances[reach <= r].min() for r in radii])
    sup = g.sup_norm(c0)
    min_pi = np.array([env.pi[sup <= r].min() for r in radii])
    k_edge = -fit_line(np.log(radii), np.log(min_w)).slope
    k_pi = -fit_line(np.log(radii), np.log(min_pi)).slope
    consts = {
        "exit_ratio_stability": stab, "c_exit": float(scaled.min()), "C_exit": float(scaled.max()),
        "volume_exponent": vol_fit.slope, "kappa_edge": k_edge, "kappa_pi": k_pi,
    }
    passed = stab <= factor
    tol = {"exit_factor": factor}
    if gamma is not None:
        consts["kappa_target"] = g.d / gamma
        tol["kappa_rel_tol"] = kappa_tol
    points = [{"r": float(r), "exit_time": float(e), "volume": float(v), "min_edge": float(a), "min_pi": float(b)}
              for r, e, v, a, b in zip(radii, et, vol, min_w, min_pi)]
    if mc_replicas:
        rho = float(radii.max())
        A = ball(g, MetricKind.GRAPH, env, x0, rho)
        taus = exit_times(env, None, x0, A, mc_replicas, seed)
        ts = np.array([rho**2 / 16, rho**2 / 8, rho**2 / 4, rho**2 / 2])
        tail = np.array([(taus <= t).mean() for t in ts])
        keep = tail > 0
        if keep.sum() >= 2:
            fit = fit_line(rho**2 / ts[keep], np.log(tail[keep]))
            consts["exit_tail_rate"] = -fit.slope
        for t, p in zip(ts, tail):
            points.append({"t": float(t), "exit_tail": float(p)})
    return FitReport("assumption suite", consts, tol, passed,
                     {"n": g.n, "d": g.d, "x0": int(x0), "radii": radii.tolist(), "seed": env.seed,
                      "law": env.law.kind.name, "law_param": env.law.param}, points)


# ------------------------------------------------------------------ Harnack


def _directions(gen, d, k):
    v = gen.standard_normal((k, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def boundary_bumps(g, x0, vertices, draw_seed, draw, width=0.35):
    """Nonnegative data on ``vertices``: 1-3 angular bumps with random weights.

    The bump directions depend only on (draw_seed, draw), so the same draw
    lands at the same relative positions for every radius.
    """
    gen = rng_generator(draw_seed, 10_000 + draw)
    k = int(gen.integers(1, 4))
    dirs = _directions(gen, g.d, k)
    weights = gen.uniform(0.2, 1.0, k)
    rel = (g.coords[vertices] - g.coords[x0]).astype(float)
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    vals = np.zeros(len(vertices))
    for dvec, w in zip(dirs, weights):
        vals += w * (rel @ dvec >= math.cos(width))
    return vals


def interior_bumps(g, x0, R, domain, draw_seed, draw, width=0.15):
    """Nonnegative initial data: 1-3 bumps of radius width*R centred in B(x0, R), scaled with R."""
    gen = rng_generator(draw_seed, 20_000 + draw)
    if draw == 0:
        out = np.zeros(len(domain))
        out[np.searchsorted(domain, x0)] = 1.0
        return out
    k = int(gen.integers(1, 4))
    rel = (g.coords[domain] - g.coords[x0]).astype(float) / R
    out = np.zeros(len(domain))
    for _ in range(k):
        while True:
            c = gen.uniform(-0.9, 0.9, g.d)
            if np.abs(c).sum() < 0.9:
                break
        w = gen.uniform(0.2, 1.0)
        near = np.linalg.norm(rel - c, axis=1) <= max(width, 1.0 / R)
        out += w * near
    return out


def outer_boundary(g, A):
    """Vertices outside A with a neighbour in A."""
    closure = boundary(g, A, closure=True)
    return np.setdiff1d(closure, A)


def elliptic_ratio(env, measure, x0, R, values):
    """sup/inf over B(x0, R/2) of the harmonic extension of outer-boundary values of B(x0, R)."""
    g = env.graph
    A = ball(g, MetricKind.GRAPH, env, x0, R)
    h = harmonic_extension(env, measure, A, values)
    inner = ball(g, MetricKind.GRAPH, env, x0, R / 2)
    lo = float(h[inner].min())
    return (float(h[inner].max()) / lo) if lo > 0 else math.inf


def harnack(env, measure, x0, R_grid, mode, draws=20, draw_seed=0, stability=4.0, cstar=2.0, max_redraws=50):
    """Harnack constants over nonnegative data draws and their stability along the radius grid.

    ELLIPTIC: h harmonic in B(x0, R) with angular-bump boundary data;
    ratio sup/inf over B(x0, R/2). PARABOLIC: killed caloric evolution on
    B(x0, C* R) over [0, 4R^2] from bump initial data (draw 0 is a point mass
    at x0); ratio sup over Q_- / inf over Q_+. C(R) is the largest ratio over
    the draws; the check passes when every C(R) is finite and
    max_R C(R) / min_R C(R) <= stability.
    """
    mode = HarnackMode(mode)
    g = env.graph
    per_r, points, degenerate = [], [], 0
    for R in R_grid:
        worst = 0.0
        if mode is HarnackMode.ELLIPTIC:
            A = ball(g, MetricKind.GRAPH, env, x0, R)
            ob = outer_boundary(g, A)
            if np.any(g.sup_norm()[ob] > g.n - 1):
                raise InvalidArgumentError(f"B(x0, {R}) does not fit inside the box")
        else:
            dom = ball(g, MetricKind.GRAPH, env, x0, cstar * R)
            if np.any(g.sup_norm()[dom] > g.n - 1):
                raise InvalidArgumentError(f"B(x0, {cstar}*{R}) does not fit inside the box")
        used = 0
        attempt = 0
        while used < draws:
            if attempt >= draws + max_redraws:
                raise InvalidArgumentError("too many degenerate draws")
            k = attempt
            attempt += 1
            if mode is HarnackMode.ELLIPTIC:
                vals = np.zeros(g.num_vertices)
                vals[ob] = boundary_bumps(g, x0, ob, draw_seed, k)
                if not vals.any():
                    degenerate += 1
                    continue
                ratio = elliptic_ratio(env, measure, x0, R, vals)
            else:
                u0 = np.zeros(g.num_vertices)
                u0[dom] = interior_bumps(g, x0, R, dom, draw_seed, k)
                if not u0.any():
                    degenerate += 1
                    continue
                fld = caloric_evolve(env, measure, x0, R, float(R) ** 2, u0, cstar=cstar)
                ratio = fld.harnack_ratio()
            if not math.isfinite(ratio):
                degenerate += 1
                continue
            used += 1
            worst = max(worst, ratio)
            points.append({"R": float(R), "draw": k, "ratio": float(ratio)})
        per_r.append(worst)
    per_r = np.array(per_r)
    stab = float(per_r.max() / per_r.min()) if np.all(per_r > 0) else math.inf
    passed = bool(np.all(np.isfinite(per_r))) and stab <= stability
    return FitReport(
        f"harnack {mode.value.lower()}", {"C_by_R": per_r.tolist(), "stability": stab, "degenerate_redraws": degenerate},
        {"stability_factor": stability}, passed,
        {"n": g.n, "d": g.d, "x0": int(x0), "R_grid": [float(r) for r in R_grid], "draws": draws,
         "draw_seed": draw_seed, "cstar": cstar, "seed": env.seed, "law": env.law.kind.name,
         "law_param": env.law.param},
        points,
    )


def oscillation(env, measure, x0, radii, sigma=1 / 3, draws=20, draw_seed=0, data=None):
    """Contraction of osc h over B(x0, sigma r) relative to B(x0, r) for harmonic h.

    h is harmonic in B(x0, R) with R = max(radii), from boundary data draws
    (or the given ``data`` on all vertices). eps_hat = max over radii of the
    oscillation ratio; passes when eps_hat < 1 for every non-constant draw.
    """
    g = env.graph
    R = max(radii)
    A = ball(g, MetricKind.GRAPH, env, x0, R)
    ob = outer_boundary(g, A)
    op = generator(env, measure, A, Boundary.DIRICHLET)
    eps_hats, points = [], []
    sets = {r: ball(g, MetricKind.GRAPH, env, x0, r) for r in radii}
    small = {r: ball(g, MetricKind.GRAPH, env, x0, sigma * r) for r in radii}
    n_draws = 1 if data is not None else draws
    for k in range(n_draws):
        if data is not None:
            vals = np.asarray(data, dtype=float)
        else:
            vals = np.zeros(g.num_vertices)
            gen = rng_generator(draw_seed, 30_000 + k)
            vals[ob] = gen.uniform(0, 1, ob.size) * boundary_bumps(g, x0, ob, draw_seed, k, width=0.8)
        h = harmonic_extension(env, measure, A, vals, op=op)
        ratios = []
        # oscillations at rounding level count as zero (constant harmonic functions)
        floor = 1e-12 * max(float(np.abs(h[A]).max()), 1e-300)
        for r in radii:
            big = np.ptp(h[sets[r]])
            if big <= floor:
                ratios.append(0.0)
                continue
            ratios.append(float(np.ptp(h[small[r]]) / big))
        eps_hats.append(max(ratios))
        points.append({"draw": k, "ratios": ratios})
    eps_hats = np.array(eps_hats)
    return FitReport("oscillation decay", {"eps_hat_max": float(eps_hats.max()), "eps_hat_mean": float(eps_hats.mean())},
                     {"eps_below": 1.0}, bool(np.all(eps_hats < 1.0)),
                     {"n": g.n, "x0": int(x0), "radii": [float(r) for r in radii], "sigma": sigma, "draws": n_draws,
                      "draw_seed": draw_seed}, points)
