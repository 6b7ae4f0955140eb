"""Solve one small network with every allocator and print what each one picks.

    python demos/compare_algorithms.py [seed]
"""
import sys

from d2dalloc import gbd, greedy, heuristic, matching
from d2dalloc.bench import ScenarioConfig, brute_force, generate
from d2dalloc.model import SolverConfig, validate


def main(seed=3):
    scen = ScenarioConfig(K=3, M=4, c1=1, c2=1, trials=1)
    inst = generate(scen, seed)
    cfg = SolverConfig(c1=1, c2=1)
    print(f"K={inst.K} groups, M={inst.M} CUs, seed {seed}")
    print(f"cellular-only sum rate: {inst.cell_rate_max().sum():.3f} bit/s/Hz\n")

    runs = [
        ("brute force", brute_force),
        ("gbd", gbd.solve),
        ("matching", matching.solve),
        ("greedy", greedy.solve),
        ("heuristic", heuristic.solve),
    ]
    print(f"{'algorithm':<12} {'R_sum':>9} {'R_d2d':>8} {'admitted':>8} {'time(s)':>8}  pairs")
    for name, fn in runs:
        rep = fn(inst, cfg)
        r = rep.report
        assert not validate(inst, rep.assignment, cfg, rtol=1e-6)
        print(f"{name:<12} {r.R_sum:9.3f} {r.R_d2d_total:8.3f} {len(r.admitted):8d} "
              f"{rep.wall_time:8.2f}  {rep.assignment.pairs}")

    # the exact solver's bound history
    rep = gbd.solve(inst, cfg)
    print(f"\nGBD: {rep.state.termination} after {rep.state.iteration} iterations")
    print(rep.state.log_text())


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
