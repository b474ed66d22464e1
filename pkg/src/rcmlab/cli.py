"""Command-line front end: sample environments, run solvers and walks, and run verification suites.

Exit codes: 0 success, 1 a verification report failed, 2 usage or validation
error, 3 runtime error (including requests over the memory budget).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import environment as envmod
from . import verify
from .environment import MeasureKind, Speed
from .errors import EnvironmentFileError, InvalidArgumentError, NonConvergenceError, SizeError
from .lattice import MetricKind, ball, build_box
from .operators import generator, schrodinger, smallest_eigenpairs
from .percolation import decompose, hole_stats
from .semigroup import heat_kernel
from .verify.report import FitReport
from .walk import Estimand, estimate, write_estimates

COMMANDS = ("sample-env", "percolation", "spectral", "kernel", "walk", "verify")
CLAIMS = (
    "decay", "gaussian", "assumptions", "harnack-elliptic", "harnack-parabolic", "near-diagonal", "lclt",
    "oscillation", "occupation", "traps", "trap-dwell", "spectral-gaps", "hole-map", "closure", "min-conductance",
)
REPORT_SCHEMA = 1
REPORT_CSV_COLUMNS = ("schema_version", "claim", "passed", "constant", "value")


class UsageError(Exception):
    """Invalid command line or configuration (exit code 2)."""


@dataclass
class ExperimentConfig:
    """Everything a run depends on; serialised verbatim into every output."""

    command: str
    claim: str | None = None
    d: int = 2
    n: int = 16
    gamma: float | None = None
    p: float | None = None
    constant: float | None = None
    xi: float = 0.25
    alpha: float = 1.0
    m: int | None = None
    lam: float | None = None
    eps: float = 0.5
    speed: str = "CSRW"
    measure: str | None = None
    t: float = 1.0
    t_grid: list = field(default_factory=lambda: [16.0, 32.0, 64.0, 128.0])
    radii: list = field(default_factory=lambda: [4.0, 8.0, 16.0])
    n_grid: list = field(default_factory=lambda: [8, 16, 32])
    mu_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2])
    seed: int = 0
    seeds: list = field(default_factory=lambda: list(range(10)))
    replicas: int = 1000
    tolerance: float | None = None
    x: list | None = None
    estimand: str = "RETURN"
    samples: int = 0
    env: str | None = None
    out: str | None = None
    csv: str | None = None

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.command == "verify" and self.claim not in CLAIMS:
            raise UsageError(f"unknown claim {self.claim!r}; choose from {', '.join(CLAIMS)}")
        if self.d < 1 or self.n < 1:
            raise UsageError("d and n must be positive")
        laws = [v for v in (self.gamma, self.p, self.constant) if v is not None]
        if len(laws) > 1:
            raise UsageError("give at most one of --gamma, --p, --constant")
        if self.gamma is not None and not self.gamma > 0:
            raise UsageError("--gamma must be positive")
        if self.p is not None and not 0 <= self.p <= 1:
            raise UsageError("--p must lie in [0, 1]")
        if self.constant is not None and not self.constant > 0:
            raise UsageError("--constant must be positive")
        if not 0 < self.xi <= 1:
            raise UsageError("--xi must lie in (0, 1]")
        if not self.t > 0:
            raise UsageError("--t must be positive")
        if any(not float(v) > 0 for v in self.t_grid):
            raise UsageError("--t-grid entries must be positive")
        if any(not float(v) > 0 for v in self.radii):
            raise UsageError("--radii entries must be positive")
        if self.replicas < 1:
            raise UsageError("--replicas must be at least 1")
        if not 0 <= self.seed < 2**64 or any(not 0 <= int(s) < 2**64 for s in self.seeds):
            raise UsageError("seeds must be 64-bit unsigned integers")
        if self.speed not in ("CSRW", "VSRW"):
            raise UsageError("--speed must be CSRW or VSRW")
        if self.measure is not None and self.measure not in ("PI", "COUNTING"):
            raise UsageError("--measure must be PI or COUNTING")
        if self.x is not None and len(self.x) != self.d:
            raise UsageError(f"--x needs {self.d} coordinates")
        if self.estimand not in [e.value for e in Estimand]:
            raise UsageError(f"unknown estimand {self.estimand!r}")
        if self.command == "sample-env" and self.out is None:
            raise UsageError("sample-env needs --out")
        return self

    def law(self):
        if self.p is not None:
            return envmod.bernoulli(self.p)
        if self.constant is not None:
            return envmod.constant(self.constant)
        return envmod.polynomial(1.0 if self.gamma is None else self.gamma)

    def to_dict(self):
        return dataclasses.asdict(self)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _seeds(text):
    """'10' means seeds 0..9; '3,5,8' lists them."""
    vals = _ints(text)
    return list(range(vals[0])) if ("," not in text and len(vals) == 1) else vals


FLAG_TYPES = {
    "d": int, "n": int, "gamma": float, "p": float, "constant": float, "xi": float, "alpha": float, "m": int,
    "lam": float, "eps": float, "speed": str.upper, "measure": str.upper, "t": float, "t_grid": _floats,
    "radii": _floats, "n_grid": _ints, "mu_grid": _floats, "seed": int, "seeds": _seeds, "replicas": int,
    "tolerance": float, "x": _ints, "estimand": str.upper, "samples": int, "env": str, "out": str, "csv": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="rcmlab", description="Random conductance model experiments")
    parser.add_argument("--version", action="version", version=f"rcmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "verify":
            sp.add_argument("claim", choices=CLAIMS)
        sp.add_argument("--config", help="JSON file of ExperimentConfig fields; flags override it")
        for key, typ in FLAG_TYPES.items():
            flag = "--" + key.replace("_", "-")
            # numbers written as text keep negative values parseable (validated later)
            sp.add_argument(flag, dest=key, type=typ, default=None)
    return parser


def load_config(args):
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(values) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values["command"] = args.command
    if args.command == "verify":
        values["claim"] = args.claim
    for key in FLAG_TYPES:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    return cfg.validate()


# ------------------------------------------------------------------ outputs


def threads():
    """Worker cap from RCM_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("RCM_THREADS", "1")))
    except ValueError as exc:
        raise UsageError("RCM_THREADS must be an integer") from exc


def envelope(cfg, results):
    """Output document: deterministic part under 'run', wall-clock time in its own field."""
    return {
        "run": {"version": __version__, "schema_version": REPORT_SCHEMA, "config": cfg.to_dict(),
                "threads": threads(), "results": results},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, doc):
    text = json.dumps(doc, sort_keys=True, indent=2, default=_json_default)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def report(fmt, results, path):
    """Write FitReports as JSON (a list of report objects) or CSV (one row per scalar constant)."""
    fmt = fmt.upper()
    if fmt == "JSON":
        with open(path, "w") as fh:
            json.dump([r.to_dict() for r in results], fh, sort_keys=True, indent=2)
            fh.write("\n")
    elif fmt == "CSV":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_CSV_COLUMNS)
            for r in results:
                for k in sorted(r.constants):
                    v = r.constants[k]
                    if not isinstance(v, (list, dict)):
                        w.writerow([REPORT_SCHEMA, r.claim, int(r.passed), k, repr(v)])
    else:
        raise InvalidArgumentError(f"unknown report format {fmt!r}")


def read_reports(path):
    with open(path) as fh:
        return [FitReport(**d) for d in json.load(fh)]


# ------------------------------------------------------------------ commands


def _environment(cfg, n=None, speed=None):
    speed = Speed(speed or cfg.speed)
    if cfg.env:
        return envmod.load(cfg.env, d=cfg.d, speed=speed)
    return envmod.sample(build_box(cfg.d, n or cfg.n), cfg.law(), cfg.seed, speed)


def _measure(cfg):
    return None if cfg.measure is None else MeasureKind(cfg.measure)


def _point(cfg, g):
    return g.index(tuple(cfg.x) if cfg.x is not None else (0,) * g.d)


def cmd_sample_env(cfg):
    env = _environment(cfg)
    envmod.save(env, cfg.out)
    write_json(cfg.out + ".json", envelope(cfg, {"num_edges": env.graph.num_edges}))
    return 0


def cmd_percolation(cfg):
    env = _environment(cfg)
    dec = decompose(env, cfg.xi)
    res = {"state": dec.state.value, "num_clusters": dec.num_clusters, "num_holes": len(dec.holes),
           "giant_size": int(dec.giant_mask.sum()), "density": dec.density(),
           "max_hole_diameter": max((h.diameter for h in dec.holes), default=0)}
    if cfg.samples:
        g = env.graph
        samples = (envmod.sample(g, cfg.law(), cfg.seed + k) for k in range(cfg.samples))
        table = hole_stats(samples, cfg.xi)
        if cfg.csv:
            table.to_csv(cfg.csv)
        res["finite_cluster_probability"] = table.finite_cluster.tail_estimate
    write_json(cfg.out, envelope(cfg, res))
    return 0


def cmd_spectral(cfg):
    env = _environment(cfg, n=2 * cfg.n)
    g = env.graph
    inner = np.nonzero(g.sup_norm() <= cfg.n)[0]
    if cfg.lam is None:
        op = generator(env, _measure(cfg), inner)
    else:
        op = schrodinger(env, _measure(cfg), cfg.lam, decompose(env, cfg.xi), inner)
    res = smallest_eigenpairs(op, 1, cfg.tolerance or 1e-8)
    write_json(cfg.out, envelope(cfg, {"lambda1": res.value, "residual": float(res.residuals[0]),
                                       "method": res.method, "states": op.size}))
    return 0


def cmd_kernel(cfg):
    env = _environment(cfg)
    x = _point(cfg, env.graph)
    ks = heat_kernel(env, _measure(cfg), None, x=x, t=cfg.t, tol=cfg.tolerance or 1e-12)
    if cfg.csv:
        ks.to_csv(cfg.csv, env.graph)
    write_json(cfg.out, envelope(cfg, {"p_t_xx": ks.at(x), "mass": ks.mass, "error_bound": ks.error_bound}))
    return 0


def cmd_walk(cfg):
    env = _environment(cfg)
    g = env.graph
    x = _point(cfg, g)
    params = {"x": int(x), "t": cfg.t}
    kind = Estimand(cfg.estimand)
    if kind in (Estimand.FUNCTIONAL_TAIL, Estimand.HOLE_EXIT, Estimand.FEYNMAN_KAC):
        params["decomposition"] = decompose(env, cfg.xi)
    if kind is Estimand.FUNCTIONAL_TAIL:
        params["eps"] = cfg.eps
    if kind is Estimand.EXIT_TIME:
        params = {"x": int(x), "r": float(cfg.radii[0])}
    if kind is Estimand.FEYNMAN_KAC:
        params["lam"] = cfg.lam if cfg.lam is not None else 1.0
        params["region"] = ball(g, MetricKind.GRAPH, env, x, float(cfg.radii[0]))
    est = estimate(env, cfg.speed, kind, params, cfg.replicas, cfg.seed)
    if cfg.csv:
        write_estimates(cfg.csv, [est])
    write_json(cfg.out, envelope(cfg, {"estimand": kind.value, "point": est.point, "ci_low": est.ci_low,
                                       "ci_high": est.ci_high, "stderr": est.stderr, "params": est.params}))
    return 0


def run_claim(cfg):
    gamma = None if cfg.constant is not None else (1.0 if cfg.gamma is None else cfg.gamma)
    speed = Speed(cfg.speed)
    tol = cfg.tolerance
    c = cfg.claim
    if c == "decay":
        return verify.decay_exponent(gamma, speed, cfg.d, cfg.t_grid, cfg.seeds, tol=tol or 0.15)
    if c == "min-conductance":
        return verify.fontes_mathieu_check(gamma or 1.0, cfg.d, cfg.n_grid, cfg.seeds, tol or 0.15)
    if c == "lclt":
        return verify.local_clt(gamma, speed, cfg.d, cfg.n_grid, cfg.t, seed=cfg.seed, replicas=cfg.replicas)
    if c == "occupation":
        return verify.proposition_ll_suite(gamma or 1.0, speed, cfg.d, cfg.xi, cfg.eps, cfg.t_grid, cfg.seeds,
                                           n=cfg.n, alpha=cfg.alpha, replicas=cfg.replicas)
    if c == "traps":
        return verify.trap_scan(gamma or 1.0, cfg.d, cfg.n_grid, cfg.mu_grid, cfg.seeds)
    if c == "trap-dwell":
        return verify.trap_dwell_check(replicas=cfg.replicas, seed=cfg.seed)
    if c == "spectral-gaps":
        return verify.spectral_scan(gamma or 1.0, cfg.d, cfg.n, cfg.alpha, cfg.xi, cfg.seeds, speed, csv_path=cfg.csv)
    if c == "hole-map":
        return verify.hole_map_feasibility(gamma or 1.0, cfg.d, cfg.n, cfg.m, cfg.alpha, cfg.xi, cfg.seeds, speed)
    if c == "closure":
        return verify.oracle_closure(replicas=cfg.replicas, seed=cfg.seed)
    # single-environment checks
    big = max(float(max(cfg.radii)) * 4, cfg.n)
    env = _environment(cfg, n=int(np.ceil(big)), speed=speed)
    g = env.graph
    x0 = _point(cfg, g)
    meas = _measure(cfg)
    if c == "assumptions":
        return verify.assumption_suite(env, meas, x0, cfg.radii, gamma=gamma)
    if c in ("harnack-elliptic", "harnack-parabolic"):
        mode = "ELLIPTIC" if c.endswith("elliptic") else "PARABOLIC"
        return verify.harnack(env, meas, x0, cfg.radii, mode, draw_seed=cfg.seed)
    if c == "oscillation":
        return verify.oscillation(env, meas, x0, cfg.radii, draw_seed=cfg.seed)
    if c == "gaussian":
        ys = [g.index((int(r),) + (0,) * (cfg.d - 1)) for r in cfg.radii]
        return verify.gaussian_bounds(env, meas, [(x0, y) for y in ys], cfg.t_grid)
    if c == "near-diagonal":
        return verify.near_diagonal_lower(env, meas, cfg.t_grid)
    raise UsageError(f"unknown claim {c!r}")


def cmd_verify(cfg):
    rep = run_claim(cfg)
    if cfg.csv:
        rep.write_points_csv(cfg.csv)
    write_json(cfg.out, envelope(cfg, rep.to_dict()))
    return 0 if rep.passed else 1


HANDLERS = {"sample-env": cmd_sample_env, "percolation": cmd_percolation, "spectral": cmd_spectral,
            "kernel": cmd_kernel, "walk": cmd_walk, "verify": cmd_verify}


def run(argv=None):
    """Parse, validate and execute; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        threads()
    except UsageError as exc:
        print(f"rcmlab: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return HANDLERS[cfg.command](cfg)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"rcmlab: error: {exc}", file=sys.stderr)
        return 2
    except SizeError as exc:
        print(f"rcmlab: size error: {exc}", file=sys.stderr)
        return 3
    except (EnvironmentFileError, NonConvergenceError, OSError, ArithmeticError, MemoryError, ValueError) as exc:
        print(f"rcmlab: runtime error: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
