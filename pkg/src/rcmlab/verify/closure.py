"""Monte Carlo estimands against their deterministic counterparts on a fixed suite of cases."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .. import environment as envmod
from ..environment import Speed
from ..lattice import MetricKind, ball, build_box, lattice_box
from ..percolation import decompose
from ..semigroup import feynman_kac, heat_kernel, solve_poisson
from ..walk import Estimand, estimate
from .report import FitReport


@dataclass(frozen=True)
class ClosureCase:
    case_id: int
    law: envmod.Law
    speed: Speed
    kind: str
    seed: int


LAWS = (envmod.constant(1.0), envmod.polynomial(1.0), envmod.polynomial(0.5), envmod.polynomial(2.0))
KINDS = ("RETURN_T1", "RETURN_T4", "EXIT_TIME", "FK_UNIF", "FK_SPECTRAL")


def default_cases(seed=0):
    """4 laws x 2 speeds x 5 estimand variants = 40 cases."""
    out = []
    for i, (law, speed, kind) in enumerate(itertools.product(LAWS, (Speed.CSRW, Speed.VSRW), KINDS)):
        out.append(ClosureCase(i, law, speed, kind, seed + i))
    return out


def run_case(case, n=6, replicas=4000, xi=0.5, lam=0.5, k_sigma=3.0):
    """(Monte Carlo estimate, deterministic value, deterministic error bound, agrees)."""
    g = build_box(2, n)
    env = envmod.sample(g, case.law, case.seed, case.speed)
    x0 = g.index((0, 0))
    if case.kind.startswith("RETURN"):
        t = 1.0 if case.kind == "RETURN_T1" else 4.0
        est = estimate(env, case.speed, Estimand.RETURN, {"x": x0, "t": t}, replicas, case.seed)
        ks = heat_kernel(env, None, None, x=x0, t=t)
        exact, bound = ks.at(x0), ks.error_bound
    elif case.kind == "EXIT_TIME":
        r = 3.0
        est = estimate(env, case.speed, Estimand.EXIT_TIME, {"x": x0, "r": r}, replicas, case.seed)
        A = ball(g, MetricKind.GRAPH, env, x0, r)
        exact, bound = float(solve_poisson(env, None, A, -1.0)[x0]), 0.0
    else:
        dec = decompose(env, xi)
        region = lattice_box(g, (0, 0), n - 2)
        f = 1.0 + 0.5 * np.cos(g.coords[:, 0]).astype(float)
        t = 2.0
        params = {"x": x0, "t": t, "lam": lam, "decomposition": dec, "region": region, "f": f}
        est = estimate(env, case.speed, Estimand.FEYNMAN_KAC, params, replicas, case.seed)
        method = "uniformization" if case.kind == "FK_UNIF" else "spectral"
        exact = float(feynman_kac(env, None, lam, dec, region, f, t, method=method)[x0])
        bound = 1e-10 if method == "spectral" else 1e-12 * float(np.abs(f).max())
    sd = math.hypot(est.stderr, bound)
    agrees = abs(est.point - exact) <= k_sigma * sd
    return est, exact, bound, agrees


def oracle_closure(cases=None, n=6, replicas=4000, min_fraction=0.95, k_sigma=3.0, seed=0):
    """Fraction of cases where the Monte Carlo estimate lies within k_sigma of its deterministic value."""
    cases = default_cases(seed) if cases is None else cases
    rows, hits = [], 0
    for c in cases:
        est, exact, bound, agrees = run_case(c, n, replicas, k_sigma=k_sigma)
        hits += agrees
        rows.append({"case": c.case_id, "law": c.law.kind.name, "law_param": c.law.param, "speed": c.speed.value,
                     "kind": c.kind, "seed": c.seed, "mc": est.point, "mc_se": est.stderr, "exact": exact,
                     "exact_bound": bound, "z": (est.point - exact) / max(math.hypot(est.stderr, bound), 1e-300),
                     "agrees": bool(agrees)})
    frac = hits / len(rows)
    return FitReport("oracle closure", {"agree_fraction": frac, "cases": len(rows)},
                     {"min_fraction": min_fraction, "k_sigma": k_sigma}, frac >= min_fraction,
                     {"n": n, "replicas": replicas, "seed": seed}, rows)
