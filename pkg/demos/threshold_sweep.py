"""Sum rate and admission versus the SINR threshold, fast allocators only.

Writes per-trial records and their aggregate next to this script.

    python demos/threshold_sweep.py [trials]
"""
import sys
from dataclasses import replace
from pathlib import Path

from d2dalloc import bench

HERE = Path(__file__).parent


def main(trials=10):
    scen = replace(bench.load_config(HERE / "scenario.json"), trials=trials)
    gammas = [5, 10, 15, 20]
    recs = bench.sweep(scen, "gamma_db", gammas, ["greedy", "heuristic"])
    bench.write_records(recs, HERE / "threshold_sweep.csv")
    rows = bench.aggregate(recs)
    bench.write_aggregate(rows, HERE / "threshold_sweep_mean.csv")

    print(f"{trials} trials per point, M={scen.M}, K={scen.K}")
    print(f"{'gamma(dB)':>9} {'algorithm':<10} {'R_sum':>8} {'R_d2d':>7} {'success':>7} {'fairness':>8}")
    for g in gammas:
        for algo in ("greedy", "heuristic"):
            m = {k: bench.mean_of(recs, algo, k, sweep_value=str(g))
                 for k in ("R_sum", "R_d2d_total", "success_rate", "fairness")}
            print(f"{g:9d} {algo:<10} {m['R_sum']:8.2f} {m['R_d2d_total']:7.2f} "
                  f"{m['success_rate']:7.2f} {m['fairness']:8.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
