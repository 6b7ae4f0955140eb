"""Command line: ``solve``, ``bench`` and ``gen``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import bench
from .model import NetworkInstance, SolverConfig, validate


def _solve(args) -> int:
    inst = NetworkInstance.load(args.instance)
    if args.gamma_db is not None:
        inst = inst.with_constants(inst.constants.with_gamma_db(args.gamma_db))
    cfg = SolverConfig(c1=args.c1, c2=args.c2, time_limit=args.time_limit)
    if args.algo == "gbd":
        from . import gbd
        rep = gbd.solve(inst, cfg, verbose=args.verbose, stream=sys.stderr)
    else:
        rep = bench.ALGORITHMS[args.algo](inst, cfg)
    r = rep.report
    out = {
        "algorithm": rep.algorithm,
        "R_sum": r.R_sum,
        "R_d2d_total": r.R_d2d_total,
        "R_cell_total": r.R_cell_total,
        "R_cell_max": r.R_cell_max,
        "R_sum_exact": r.R_sum_exact,
        "success_rate": r.success_rate,
        "fairness": r.fairness,
        "wall_time": rep.wall_time,
        "proven_optimal": rep.proven_optimal,
        "gap": rep.gap,
        "y": rep.assignment.y.tolist(),
        "p_d2d": rep.assignment.p_d2d.tolist(),
        "p_cell": rep.assignment.p_cell.tolist(),
        "violations": [str(v) for v in validate(inst, rep.assignment, cfg)],
    }
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def _parse_sweep(text):
    name, _, values = text.partition("=")
    if not values:
        raise argparse.ArgumentTypeError("sweep must look like param=v1,v2,...")
    return name.strip(), [v.strip() for v in values.split(",") if v.strip()]


def _bench(args) -> int:
    config = bench.load_config(args.config)
    if args.trials is not None:
        config = replace(config, trials=args.trials)
    algos = args.algos.split(",")
    solver = SolverConfig(time_limit=args.time_limit)
    if args.sweep:
        name, values = args.sweep
        recs = bench.sweep(config, name, values, algos, solver, args.workers)
    else:
        recs = bench.run(config, algos, solver, args.workers)
    bench.write_records(recs, args.out)
    if args.aggregate:
        bench.write_aggregate(bench.aggregate(recs), args.aggregate)
    failed = sum(not r.ok for r in recs)
    print(f"{len(recs)} records written to {args.out}" + (f", {failed} failed" if failed else ""),
          file=sys.stderr)
    return 0


def _gen(args) -> int:
    config = bench.load_config(args.config)
    inst = bench.generate(config, args.seed)
    inst.save(args.out, include_gains=not args.no_gains)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2dalloc", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance file and print a JSON summary")
    s.add_argument("instance")
    s.add_argument("--algo", required=True, choices=sorted(bench.ALGORITHMS))
    s.add_argument("--c1", type=int, default=1)
    s.add_argument("--c2", type=int, default=1)
    s.add_argument("--gamma-db", type=float, default=None)
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("--verbose", action="store_true", help="per-iteration log on stderr (gbd)")
    s.set_defaults(func=_solve)

    b = sub.add_parser("bench", help="Monte-Carlo runs from a scenario file")
    b.add_argument("config")
    b.add_argument("--out", required=True)
    b.add_argument("--sweep", type=_parse_sweep, default=None, metavar="PARAM=V1,V2,...")
    b.add_argument("--algos", default="gbd,greedy,heuristic")
    b.add_argument("--aggregate", default=None, help="also write mean/std per sweep point")
    b.add_argument("--trials", type=int, default=None)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--time-limit", type=float, default=None, help="per-instance cap for gbd (s)")
    b.set_defaults(func=_bench)

    g = sub.add_parser("gen", help="write one generated instance")
    g.add_argument("config")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--no-gains", action="store_true", help="store positions and seed only")
    g.set_defaults(func=_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
