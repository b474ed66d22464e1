"""Trap motifs, spectral gaps, hole-map feasibility and occupation-time tails."""

from __future__ import annotations

import csv
import math

import numpy as np

from .. import environment as envmod
from ..environment import Speed, _edge_ids
from ..errors import EmptyDomainError, HoleMapInfeasibleError, InvalidArgumentError
from ..lattice import build_box
from ..operators import generator, hole_operator, schrodinger, smallest_eigenpairs
from ..percolation import build_hole_map, decompose, default_subbox_size, validate_hole_map
from ..rng import generator as rng_generator
from ..semigroup import feynman_kac, semigroup_apply, solve_poisson
from ..stats import fit_line, mean_interval, wilson_interval
from ..walk import exit_times, occupation_samples
from .report import FitReport


# ------------------------------------------------------------------ motifs


def incident_by_direction(g):
    """(V, 2d) array of edge ids: column 2a is the edge towards +e_a, 2a+1 towards -e_a; -1 if absent."""
    out = np.full((g.num_vertices, 2 * g.d), -1, dtype=np.int64)
    lo = np.asarray(g.origin) - g.n
    hi = np.asarray(g.origin) + g.n
    for a in range(g.d):
        for s, col in ((1, 2 * a), (-1, 2 * a + 1)):
            nb = g.coords.copy()
            nb[:, a] += s
            ok = np.all((nb >= lo) & (nb <= hi), axis=1)
            src = np.nonzero(ok)[0]
            out[src, col] = _edge_ids(g, src, np.atleast_1d(g.index(nb[ok])))
    return out


def motif_masks(env, n, threshold):
    """CSRW and VSRW trap motifs inside B_n.

    CSRW: edges of B_n with omega >= 1/2 whose 4d - 2 neighbouring edges all
    have omega < threshold. VSRW: vertices of B_n whose 2d incident edges all
    have omega < threshold. The sampled box must contain B_{n+1}.
    """
    g = env.graph
    if g.n < n + 1:
        raise InvalidArgumentError("motif counting on B_n needs an environment on B_{n+1}")
    inc = incident_by_direction(g)
    w = env.conductances
    sup = g.sup_norm()
    u, v = g.edges[:, 0], g.edges[:, 1]
    in_box = (sup[u] <= n) & (sup[v] <= n)
    # smallest "other" conductance around u and v; edge (u, v) points +e_a from u
    winc = np.where(inc >= 0, w[np.maximum(inc, 0)], -np.inf)
    a = g.edge_axis
    mask_u = np.ones((g.num_edges, 2 * g.d), dtype=bool)
    mask_u[np.arange(g.num_edges), 2 * a] = False
    mask_v = np.ones((g.num_edges, 2 * g.d), dtype=bool)
    mask_v[np.arange(g.num_edges), 2 * a + 1] = False
    around = np.maximum(
        np.where(mask_u, winc[u], -np.inf).max(axis=1), np.where(mask_v, winc[v], -np.inf).max(axis=1)
    )
    csrw = in_box & (w >= 0.5) & (around < threshold)
    vsrw = (sup <= n) & (winc.max(axis=1) < threshold)
    return csrw, vsrw


def motif_expectations(g_inner_edges, g_inner_vertices, gamma, d, q):
    """Exact product-law expectations and per-site probabilities of both motif counts."""
    p_edge = q ** (4 * d - 2) * (1.0 - 2.0**-gamma)
    p_vertex = q ** (2 * d)
    return g_inner_edges * p_edge, p_edge, g_inner_vertices * p_vertex, p_vertex


def _within(total, expect, var, k=3.0):
    sd = math.sqrt(max(var, 0.0))
    if sd == 0:
        return total == expect
    return abs(total - expect) <= k * sd


def dwell_oracle(env, x, y):
    """Exact E^x[exit time of {x, y}] from the Poisson solve."""
    u = solve_poisson(env, None, np.array(sorted((x, y))), -1.0)
    return float(u[x])


def trap_scan(gamma, d, n_grid, mu_grid, seeds, speed=Speed.CSRW, dwell_replicas=200, k_sigma=3.0):
    """Motif counts against the exact product-law expectation, plus dwell times at found traps.

    For each (n, mu) the threshold is n^-mu and q = n^-(mu gamma) is the
    probability that an edge falls below it. Counts are summed over seeds and
    compared with the expectation; the spread is the larger of the binomial
    and the across-seed empirical variance. The log-count slopes in log n are
    reported next to d - mu gamma (4d - 2) and d - 2 d mu gamma. At the first
    CSRW trap found for each (n, mu) the exact mean dwell on {x, y} is solved
    and a short Monte Carlo run recorded; the dwell slope against mu log n is
    fitted over all traps found.
    """
    n_grid = sorted(int(n) for n in n_grid)
    law = envmod.polynomial(gamma)
    seeds = list(seeds)
    rows, ok = [], True
    dwell_x, dwell_y = [], []
    counts = {}
    for n in n_grid:
        g = build_box(d, n + 1)
        envs = [envmod.sample(g, law, s, speed) for s in seeds]
        sup = g.sup_norm()
        inner_edges = int(np.sum((sup[g.edges[:, 0]] <= n) & (sup[g.edges[:, 1]] <= n)))
        inner_vertices = int(np.sum(sup <= n))
        for mu in mu_grid:
            thr = float(n) ** (-mu)
            q = float(law.cdf(thr))
            e_c, p_c, e_v, p_v = motif_expectations(inner_edges, inner_vertices, gamma, d, q)
            per_c, per_v, trap = [], [], None
            for env in envs:
                mc, mv = motif_masks(env, n, thr)
                per_c.append(int(mc.sum()))
                per_v.append(int(mv.sum()))
                if trap is None and mc.any() and mu > 0:
                    trap = (env, int(np.nonzero(mc)[0][0]))
            S = len(seeds)
            tot_c, tot_v = sum(per_c), sum(per_v)
            var_c = max(S * inner_edges * p_c * (1 - p_c), S * np.var(per_c, ddof=1) if S > 1 else 0.0)
            var_v = max(S * inner_vertices * p_v * (1 - p_v), S * np.var(per_v, ddof=1) if S > 1 else 0.0)
            good_c = _within(tot_c, S * e_c, var_c, k_sigma)
            good_v = _within(tot_v, S * e_v, var_v, k_sigma)
            ok &= good_c and good_v
            counts[(n, mu)] = (tot_c / S, tot_v / S)
            row = {"n": n, "mu": float(mu), "threshold": thr, "csrw_count": tot_c, "csrw_expected": S * e_c,
                   "csrw_sd": math.sqrt(var_c), "vsrw_count": tot_v, "vsrw_expected": S * e_v,
                   "vsrw_sd": math.sqrt(var_v), "within": bool(good_c and good_v)}
            if tot_c == 0:
                # one-sided 95% bound on the per-edge motif probability
                row["csrw_upper_bound"] = 1.0 - 0.05 ** (1.0 / (S * inner_edges))
            if trap is not None:
                env, e = trap
                x, y = (int(v) for v in env.graph.edges[e])
                oracle = dwell_oracle(env, x, y)
                row["dwell_exact"] = oracle
                if dwell_replicas:
                    taus = exit_times(env, Speed.CSRW, x, [x, y], dwell_replicas, seed=int(env.seed))
                    m, se, _, _ = mean_interval(taus)
                    row.update({"dwell_mc": m, "dwell_se": se})
                dwell_x.append(mu * math.log(n))
                dwell_y.append(math.log(oracle))
            rows.append(row)
    consts = {}
    for mu in mu_grid:
        ns = [n for n in n_grid if counts[(n, mu)][0] > 0]
        if len(ns) >= 2:
            consts[f"csrw_slope_mu{mu:g}"] = fit_line(np.log(ns), np.log([counts[(n, mu)][0] for n in ns])).slope
        consts[f"csrw_slope_pred_mu{mu:g}"] = d - mu * gamma * (4 * d - 2)
        nv = [n for n in n_grid if counts[(n, mu)][1] > 0]
        if len(nv) >= 2:
            consts[f"vsrw_slope_mu{mu:g}"] = fit_line(np.log(nv), np.log([counts[(n, mu)][1] for n in nv])).slope
        consts[f"vsrw_slope_pred_mu{mu:g}"] = d - 2 * d * mu * gamma
    if len(dwell_x) >= 2 and np.ptp(dwell_x) > 0:
        consts["dwell_slope"] = fit_line(dwell_x, dwell_y).slope
    return FitReport("trap motifs", consts, {"k_sigma": k_sigma}, ok,
                     {"gamma": gamma, "d": d, "n_grid": n_grid, "mu_grid": list(mu_grid), "seeds": seeds,
                      "dwell_replicas": dwell_replicas}, rows)


def hand_built_trap(surround=1e-4, center=1.0, d=2):
    """Box of radius 2 with unit conductances except a trap edge at the origin.

    The edge from the origin towards +e_1 has conductance ``center`` and its
    4d - 2 neighbouring edges ``surround``. Returns (env, x, y).
    """
    g = build_box(d, 2)
    w = np.ones(g.num_edges)
    x = g.index((0,) * d)
    y = g.index((1,) + (0,) * (d - 1))
    inc = incident_by_direction(g)
    for v in (x, y):
        w[inc[v][inc[v] >= 0]] = surround
    w[g.edge_index(x, y)] = center
    return envmod.from_array(g, w, Speed.CSRW), int(x), int(y)


def trap_dwell_check(surround=1e-4, center=1.0, replicas=2000, seed=0, k_sigma=3.0):
    """Monte Carlo mean exit time from a hand-built trap against the exact Poisson solve."""
    env, x, y = hand_built_trap(surround, center)
    oracle = dwell_oracle(env, x, y)
    leak = (4 * env.graph.d - 2) / 2 * surround
    two_state = (center + leak) / leak
    taus = exit_times(env, Speed.CSRW, x, [x, y], replicas, seed)
    m, se, lo, hi = mean_interval(taus)
    passed = abs(m - oracle) <= k_sigma * se
    return FitReport("trap dwell", {"dwell_mc": m, "dwell_se": se, "dwell_exact": oracle, "dwell_two_state": two_state},
                     {"k_sigma": k_sigma}, passed,
                     {"surround": surround, "center": center, "replicas": replicas, "seed": seed})


# ------------------------------------------------------------------ spectral gaps


def gap_lambda(d, xi, n, alpha):
    """lambda = (1 + 8d / xi) n^-alpha."""
    return (1.0 + 8.0 * d / xi) * float(n) ** (-alpha)


SPECTRAL_COLUMNS = ("n", "seed", "lambda1", "zeta1", "bound", "pass")


def spectral_scan(gamma, d, n, alpha, xi, seeds, speed=Speed.CSRW, tol=1e-8, min_fraction=0.9, csv_path=None):
    """Killed Schrodinger gap lambda_1 on B_n and killed hole gap zeta_1, both against n^-alpha.

    Environments live on B_{2n} so that the giant proxy and the killing are
    not boundary artefacts of B_n. A seed without hole vertices in B_n passes
    the zeta_1 check vacuously and is counted as such.
    """
    law = envmod.polynomial(gamma)
    g = build_box(d, 2 * n)
    bound = float(n) ** (-alpha)
    lam = gap_lambda(d, xi, n, alpha)
    inner = np.nonzero(g.sup_norm() <= n)[0]
    rows, passes, vacuous, max_res = [], 0, 0, 0.0
    for s in seeds:
        env = envmod.sample(g, law, s, speed)
        dec = decompose(env, xi)
        res = smallest_eigenpairs(schrodinger(env, None, lam, dec, inner), 1, tol)
        lam1 = res.value
        max_res = max(max_res, float(res.residuals.max() / max(1.0, abs(lam1))))
        try:
            hres = smallest_eigenpairs(hole_operator(env, None, dec, n), 1, tol)
            zeta1 = hres.value
            max_res = max(max_res, float(hres.residuals.max() / max(1.0, abs(zeta1))))
        except EmptyDomainError:
            zeta1 = math.inf
            vacuous += 1
        ok = lam1 >= bound and zeta1 >= bound
        passes += ok
        rows.append({"n": n, "seed": int(s), "lambda1": lam1, "zeta1": zeta1, "bound": bound, "pass": bool(ok)})
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SPECTRAL_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    frac = passes / len(rows)
    return FitReport("spectral gaps", {"pass_fraction": frac, "lambda": lam, "bound": bound,
                                       "vacuous_hole_seeds": vacuous, "max_relative_residual": max_res},
                     {"min_fraction": min_fraction, "residual": tol},
                     frac >= min_fraction and max_res <= tol,
                     {"gamma": gamma, "d": d, "n": n, "alpha": alpha, "xi": xi, "seeds": list(seeds),
                      "speed": Speed(speed).value}, rows)


# ------------------------------------------------------------------ hole map


def hole_map_feasibility(gamma, d, n, m, alpha, xi, seeds, variant=Speed.CSRW, min_fraction=0.95):
    """Fraction of seeds on which the greedy injective hole map exists; every built map is re-validated."""
    law = envmod.polynomial(gamma)
    g = build_box(d, 2 * n)
    m = default_subbox_size(n, d) if m is None else m
    rows, feasible, invalid = [], 0, 0
    for s in seeds:
        env = envmod.sample(g, law, s)
        dec = decompose(env, xi)
        row = {"seed": int(s), "feasible": False, "problems": 0, "mapped": 0, "max_length": 0, "min_conductance": math.inf}
        try:
            hmap = build_hole_map(dec, alpha, m, n, variant)
        except (HoleMapInfeasibleError, InvalidArgumentError) as exc:
            row["reason"] = str(exc)
            rows.append(row)
            continue
        problems = validate_hole_map(hmap, dec)
        feasible += 1
        invalid += bool(problems)
        row.update({"feasible": True, "problems": len(problems), "mapped": len(hmap)})
        if hmap.certificates:
            row["max_length"] = max(c.length for c in hmap.certificates.values())
            row["min_conductance"] = min(c.min_conductance for c in hmap.certificates.values())
        rows.append(row)
    frac = feasible / len(rows)
    return FitReport("hole map", {"feasible_fraction": frac, "invalid_maps": invalid},
                     {"min_fraction": min_fraction}, frac >= min_fraction and invalid == 0,
                     {"gamma": gamma, "d": d, "n": n, "m": m, "alpha": alpha, "xi": xi, "seeds": list(seeds),
                      "variant": Speed(variant).value}, rows)


# ------------------------------------------------------------------ occupation tails


def hole_start(dec, n_half):
    """Smallest-id vertex in B_{n_half} of the largest hole meeting B_{n_half}, or None."""
    g = dec.env.graph
    near = g.sup_norm() <= n_half
    best = None
    for h in dec.holes:
        vs = h.vertices[near[h.vertices]]
        if vs.size and (best is None or h.vertices.size > best[0]):
            best = (h.vertices.size, int(vs.min()))
    return None if best is None else best[1]


def _stretched_fit(ts, probs):
    keep = (probs > 0) & (probs < 1)
    if keep.sum() < 2:
        return math.nan
    return fit_line(np.log(ts[keep]), np.log(-np.log(probs[keep]))).slope


def proposition_ll_suite(gamma, speed, d, xi, eps, t_grid, seeds, n=16, alpha=1.0, replicas=2000, boot=500,
                         tol=1e-12, level=0.95):
    """Monte Carlo tails of the occupation time in the giant against the Chebyshev bound.

    For each seed the walk starts in the largest hole meeting B_{n/2} of an
    environment on B_{n+1}. Channel (a): P(A(t) <= eps t) and P(tau_h >= t/2)
    from ``replicas`` walks, pooled over seeds, with sigma fitted from
    log(-log P) against log t and a bootstrap interval over seeds (points
    with P in {0, 1} are dropped). Channel (b): the deterministic bound
    e^{eps lam t} E[e^{-lam A(t)}; tau_{B_n} > t] + P(tau_{B_n} <= t) with
    lam = (1 + 8d / xi) n^-alpha must dominate the Monte Carlo tail at every
    (t, seed). Seeds without a hole near the origin are reported as vacuous.
    """
    law = envmod.polynomial(gamma)
    speed = Speed(speed)
    g = build_box(d, n + 1)
    ts = np.asarray(t_grid, dtype=float)
    lam = gap_lambda(d, xi, n, alpha)
    inner = np.nonzero(g.sup_norm() <= n)[0]
    dom_mask = np.zeros(g.num_vertices, dtype=bool)
    dom_mask[inner] = True
    tails, hole_tails, used, rows = [], [], [], []
    dominated = True
    vacuous = 0
    for s in seeds:
        env = envmod.sample(g, law, s, speed)
        dec = decompose(env, xi)
        x = hole_start(dec, n // 2)
        if x is None:
            vacuous += 1
            rows.append({"seed": int(s), "vacuous": True})
            continue
        hole = dec.holes[dec.hole_labels[x]].vertices
        op_kill = generator(env, None, inner)
        one = np.ones(op_kill.size)
        jx = int(op_kill.local_index([x])[0])
        p_tail, h_tail = [], []
        for i, t in enumerate(ts):
            occ, _, _ = occupation_samples(env, speed, x, t, dec.giant_mask, dom_mask, replicas, s, first_stream=i * replicas)
            hits = int(np.sum(occ <= eps * t))
            p_hat = hits / replicas
            ext = exit_times(env, speed, x, hole, replicas, s, first_stream=(len(ts) + i) * replicas, horizon=t / 2)
            q_hat = float(np.mean(~(ext < t / 2)))
            fk = feynman_kac(env, None, lam, dec, inner, np.ones(g.num_vertices), t, tol)[x]
            surv, sb = semigroup_apply(op_kill, one, t, tol)
            cheb = math.exp(eps * lam * t) * fk + max(0.0, 1.0 - surv[jx])
            ok = p_hat <= cheb
            dominated &= ok
            lo, hi = wilson_interval(hits, replicas, level)
            rows.append({"seed": int(s), "t": float(t), "tail": p_hat, "tail_lo": lo, "tail_hi": hi,
                         "hole_exit_tail": q_hat, "chebyshev": cheb, "dominated": bool(ok)})
            p_tail.append(p_hat)
            h_tail.append(q_hat)
        tails.append(p_tail)
        hole_tails.append(h_tail)
        used.append(int(s))
    consts = {"lambda": lam, "vacuous_seeds": vacuous, "chebyshev_dominates": bool(dominated)}
    if not tails:
        return FitReport("occupation tail", consts, {"level": level}, dominated,
                         {"gamma": gamma, "d": d, "xi": xi, "eps": eps, "t_grid": ts.tolist(), "seeds": list(seeds),
                          "n": n, "alpha": alpha, "replicas": replicas}, rows, notes="no holes near the origin")
    tails = np.array(tails)
    hole_tails = np.array(hole_tails)
    pooled = tails.mean(axis=0)
    sigma = _stretched_fit(ts, pooled)
    sigma_h = _stretched_fit(ts, hole_tails.mean(axis=0))
    gen = rng_generator(0 if not used else used[0], 99)
    boots = []
    for _ in range(boot):
        pick = gen.integers(0, tails.shape[0], tails.shape[0])
        val = _stretched_fit(ts, tails[pick].mean(axis=0))
        if math.isfinite(val):
            boots.append(val)
    a = (1 - level) / 2
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))) if boots else (math.nan, math.nan)
    decreasing = bool(np.all(np.diff(pooled) <= 1e-12))
    consts.update({"sigma": sigma, "sigma_ci_low": ci[0], "sigma_ci_high": ci[1], "sigma_hole_exit": sigma_h,
                   "tail_decreasing": decreasing, "pooled_tail": pooled.tolist()})
    passed = dominated and math.isfinite(sigma) and sigma > 0 and ci[0] > 0
    return FitReport("occupation tail", consts, {"level": level}, passed,
                     {"gamma": gamma, "d": d, "xi": xi, "eps": eps, "t_grid": ts.tolist(), "seeds": list(seeds),
                      "n": n, "alpha": alpha, "replicas": replicas, "boot": boot, "speed": speed.value}, rows)
