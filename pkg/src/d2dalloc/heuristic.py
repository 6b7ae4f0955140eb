"""Low-complexity allocation.

Channels are visited from the strongest CU link down.  Each channel takes
the groups that would suffer the least interference on it, as long as the
jointly re-optimised powers stay feasible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .model import NetworkInstance, SolveReport, SolverConfig, evaluate


@dataclass(frozen=True)
class HeuristicAggregates:
    """Worst-receiver gains: ``g_c2d_min[m, k]`` and ``g_d2d_cross_min[k, k']``."""

    g_c2d_min: np.ndarray
    g_d2d_cross_min: np.ndarray

    @classmethod
    def from_instance(cls, instance: NetworkInstance) -> "HeuristicAggregates":
        G = instance.gains
        K, M = instance.K, instance.M
        c2d = np.zeros((M, K))
        cross = np.zeros((K, K))
        for k in range(K):
            c2d[:, k] = G.g_c2d[k].min(axis=1)
            cross[k] = G.g_d2d_cross[k].min(axis=1)
        return cls(c2d, cross)


@dataclass
class HeuristicTrace:
    order: list = field(default_factory=list)
    events: list = field(default_factory=list)   # (m, k, "kept" | "reverted")
    solves: int = 0


def interference_score(agg: HeuristicAggregates, p_d2d, p_cell, k: int, m: int) -> float:
    """Interference group ``k`` would see on channel ``m`` at the current powers."""
    return float(p_d2d[:, m] @ agg.g_d2d_cross_min[k] + p_cell[m] * agg.g_c2d_min[m, k])


def solve(instance: NetworkInstance, config: SolverConfig) -> SolveReport:
    t0 = time.perf_counter()
    K, M = instance.K, instance.M
    agg = HeuristicAggregates.from_instance(instance)
    tr = HeuristicTrace()
    # stable sort keeps the lower CU index first on ties
    order = sorted(range(M), key=lambda m: -instance.gains.g_cell[m])
    tr.order = order
    y = np.zeros((K, M), dtype=np.int8)
    current = convex.solve_powers(instance, y, config)
    p_d2d = np.zeros((K, M))
    p_cell = np.full(M, instance.constants.p_max_cell)
    for m in order:
        eligible = [k for k in range(K) if y[k].sum() < config.c1]
        while y[:, m].sum() < config.c2 and eligible:
            scores = [interference_score(agg, p_d2d, p_cell, k, m) for k in eligible]
            k = eligible[int(np.argmin(scores))]
            eligible.remove(k)
            y[k, m] = 1
            tr.solves += 1
            try:
                ps = convex.solve_powers(instance, y, config)
            except convex.SolverError:
                ps = None
            if ps is None:
                y[k, m] = 0
                tr.events.append((m, k, "reverted"))
                continue
            tr.events.append((m, k, "kept"))
            current = ps
            p_d2d = np.array(ps.assignment.p_d2d)
            p_cell = np.array(ps.assignment.p_cell)
    assignment = current.assignment
    rep = evaluate(instance, assignment, config)
    return SolveReport("heuristic", assignment, rep, current.objective,
                       time.perf_counter() - t0, None, None, tr, {"solves": tr.solves})
