"""Run the desk-scale experiments at their acceptance sizes and write one JSON report and one CSV of raw points each.

Usage::

    python3 scripts/run_experiments.py                 # everything, into results/
    python3 scripts/run_experiments.py decay traps     # a subset
    python3 scripts/run_experiments.py --out /tmp/r --list
"""

import argparse
import json
import pathlib
import sys
import time

from rcmlab import environment as envmod
from rcmlab.environment import Speed
from rcmlab.lattice import build_box
from rcmlab.verify import (
    decay_exponent,
    fontes_mathieu_check,
    harnack,
    hole_map_feasibility,
    local_clt,
    oracle_closure,
    proposition_ll_suite,
    spectral_scan,
    trap_dwell_check,
    trap_scan,
)
from rcmlab.verify.elliptic import HarnackMode

T_GRID = [16, 32, 64, 128, 256, 512, 1024]


def _harnack(law, mode):
    def run():
        env = envmod.sample(build_box(2, 66), law, 3)
        return harnack(env, None, env.graph.index((0, 0)), [8, 16, 32], mode, draws=20, stability=4.0)
    return run


EXPERIMENTS = {
    "min-conductance-g1": lambda: fontes_mathieu_check(1.0, 2, [16, 32, 64, 128, 256, 512], range(20)),
    "min-conductance-g2": lambda: fontes_mathieu_check(2.0, 2, [16, 32, 64, 128, 256, 512], range(20)),
    "closure": lambda: oracle_closure(),
    "decay-unit-csrw": lambda: decay_exponent(None, Speed.CSRW, 2, T_GRID, range(10)),
    "decay-unit-vsrw": lambda: decay_exponent(None, Speed.VSRW, 2, T_GRID, range(10)),
    "decay-g1-csrw": lambda: decay_exponent(1.0, Speed.CSRW, 2, T_GRID, range(10)),
    "decay-g1-vsrw": lambda: decay_exponent(1.0, Speed.VSRW, 2, T_GRID, range(10)),
    "decay-origin-g0.05": lambda: decay_exponent(0.05, Speed.CSRW, 2, T_GRID, range(10), tol=0.2, point="origin"),
    "spectral-gaps": lambda: spectral_scan(1.0, 2, 32, 1.0, 0.05, range(50)),
    "spectral-gaps-xi0.25": lambda: spectral_scan(1.0, 2, 32, 1.0, 0.25, range(50)),
    "hole-map": lambda: hole_map_feasibility(1.0, 2, 64, 4, 1.0, 0.25, range(20)),
    "occupation": lambda: proposition_ll_suite(1.0, Speed.CSRW, 2, 0.25, 0.5, [1, 2, 4, 8, 16], range(20), n=16),
    "harnack-elliptic-unit": _harnack(envmod.constant(1.0), HarnackMode.ELLIPTIC),
    "harnack-parabolic-unit": _harnack(envmod.constant(1.0), HarnackMode.PARABOLIC),
    "harnack-elliptic-g1": _harnack(envmod.polynomial(1.0), HarnackMode.ELLIPTIC),
    "harnack-parabolic-g1": _harnack(envmod.polynomial(1.0), HarnackMode.PARABOLIC),
    "lclt-unit": lambda: local_clt(None, Speed.VSRW, 2, [8, 16, 32], t=1.0, M=2.0, seed=1),
    "lclt-g1": lambda: local_clt(1.0, Speed.VSRW, 2, [8, 16, 32], t=1.0, M=2.0, seed=1),
    "traps": lambda: trap_scan(1.0, 2, [64, 128], [0.1, 0.2, 0.3], range(20)),
    "trap-dwell": lambda: trap_dwell_check(1e-4, 1.0, replicas=2000),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="experiment names (prefix match); default all")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--list", action="store_true", help="list experiment names and exit")
    args = ap.parse_args(argv)
    if args.list:
        print("\n".join(EXPERIMENTS))
        return 0
    chosen = [k for k in EXPERIMENTS if not args.names or any(k.startswith(n) for n in args.names)]
    if not chosen:
        ap.error(f"no experiment matches {args.names}")
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name in chosen:
        t0 = time.perf_counter()
        rep = EXPERIMENTS[name]()
        elapsed = time.perf_counter() - t0
        (out / f"{name}.json").write_text(rep.to_json())
        rep.write_points_csv(out / f"{name}.csv")
        summary[name] = {"passed": rep.passed, "seconds": round(elapsed, 1)}
        print(f"{rep.summary()} [{elapsed:.0f}s]", flush=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if all(v["passed"] for v in summary.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
