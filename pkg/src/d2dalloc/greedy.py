"""Greedy pair selection: repeatedly add the (group, channel) pair that
raises the optimised sum rate of the whole selection the most."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .model import Assignment, NetworkInstance, SolveReport, SolverConfig, evaluate


@dataclass
class GreedyState:
    selected: list = field(default_factory=list)
    live: set = field(default_factory=set)
    y: np.ndarray = None
    trace: list = field(default_factory=list)   # (round, candidates, pair, T_sum)
    solves: int = 0


def _admissible(y, k, m, config) -> bool:
    return y[k].sum() < config.c1 and y[:, m].sum() < config.c2


def solve(instance: NetworkInstance, config: SolverConfig) -> SolveReport:
    """Greedy allocation.

    Pairs that are infeasible, or that can no longer fit within the caps,
    are dropped for good.  A pair is only added when it strictly improves
    the sum rate.
    """
    t0 = time.perf_counter()
    K, M = instance.K, instance.M
    st = GreedyState(live={(k, m) for k in range(K) for m in range(M)},
                     y=np.zeros((K, M), dtype=np.int8))
    current = convex.solve_powers(instance, st.y, config)
    best_val = current.objective
    rnd = 0
    while st.live:
        rnd += 1
        best = None
        for k, m in sorted(st.live):
            if not _admissible(st.y, k, m, config):
                st.live.discard((k, m))
                continue
            y = st.y.copy()
            y[k, m] = 1
            st.solves += 1
            try:
                ps = convex.solve_powers(instance, y, config)
            except convex.SolverError:
                ps = None
            if ps is None:
                st.live.discard((k, m))
                continue
            if best is None or ps.objective > best[1].objective:
                best = ((k, m), ps)
        if best is None or best[1].objective <= best_val:
            break
        (k, m), ps = best
        st.y[k, m] = 1
        st.selected.append((k, m))
        st.live.discard((k, m))
        st.trace.append((rnd, len(st.live) + 1, (k, m), ps.objective))
        best_val = ps.objective
        current = ps
    assignment = current.assignment
    rep = evaluate(instance, assignment, config)
    return SolveReport("greedy", assignment, rep, best_val, time.perf_counter() - t0,
                       None, None, st, {"rounds": len(st.selected), "solves": st.solves})
