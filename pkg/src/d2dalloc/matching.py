"""Exact allocation for one channel per group and one group per channel.

With both caps equal to one, pairs never share interference, so the best
powers of each (group, CU) pair can be found in isolation and the channel
assignment becomes a maximum-weight bipartite matching.
"""
from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import convex
from .model import Assignment, NetworkInstance, SolveReport, SolverConfig, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightMatrix:
    """Sum rate of every pairing; non-candidates carry the CU-only rate."""

    w: np.ndarray
    candidate: np.ndarray
    pair_powers: tuple

    def dump(self, sep: str = ",") -> str:
        buf = io.StringIO()
        buf.write(sep.join(("k", "m", "candidate", "weight", "p_d2d", "p_cell")) + "\n")
        K, M = self.w.shape
        for k in range(K):
            for m in range(M):
                pp = self.pair_powers[k][m]
                pd, pc = pp if pp is not None else ("", "")
                buf.write(sep.join(str(v) for v in (k, m, int(self.candidate[k, m]),
                                                    repr(float(self.w[k, m])), pd, pc)) + "\n")
        return buf.getvalue()


def build_weights(instance: NetworkInstance, config: SolverConfig) -> WeightMatrix:
    K, M = instance.K, instance.M
    rmax = instance.cell_rate_max()
    w = np.tile(rmax, (K, 1)).astype(float)
    cand = np.zeros((K, M), dtype=bool)
    powers = [[None] * M for _ in range(K)]
    for k in range(K):
        for m in range(M):
            try:
                pr = convex.solve_pair(instance, k, m, config)
            except convex.SolverError as exc:
                log.warning("pair (%d, %d) treated as non-candidate: %s", k, m, exc)
                pr = None
            if pr is None:
                continue
            cand[k, m] = True
            w[k, m] = pr.R_sum
            powers[k][m] = (pr.p_d2d, pr.p_cell)
    return WeightMatrix(w, cand, tuple(tuple(r) for r in powers))


def _min_cost_assignment(cost: np.ndarray) -> np.ndarray:
    """Kuhn-Munkres with potentials on an ``n x m`` cost matrix, ``n <= m``.

    Returns the column of every row.
    """
    n, m = cost.shape
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)      # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = INF, 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    cols = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    return cols


def _best_value(w: np.ndarray) -> float:
    if w.shape[0] == 0:
        return 0.0
    if w.shape[0] > w.shape[1]:
        w = w.T
    cols = _min_cost_assignment(-w)
    return float(w[np.arange(w.shape[0]), cols].sum())


def hungarian_max(weights) -> list:
    """Maximum-weight one-to-one assignment of rows to columns.

    Every row (or every column, whichever is fewer) is matched.  Among
    optimal matchings the lexicographically smallest column vector is
    returned.

    Returns
    -------
    list of (row, col)
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or not np.isfinite(w).all():
        raise ValueError("weights must be a finite 2-D matrix")
    if w.size == 0:
        return []
    transpose = w.shape[0] > w.shape[1]
    if transpose:
        w = w.T
    n, m = w.shape
    best = _best_value(w)
    tol = 1e-12 * max(1.0, np.abs(w).max()) * n
    rows_left = list(range(n))
    cols_left = list(range(m))
    fixed = []
    acc = 0.0
    for i in range(n):
        rows_left.remove(i)
        for j in sorted(cols_left):
            rest_cols = [c for c in cols_left if c != j]
            sub = w[np.ix_(rows_left, rest_cols)]
            val = acc + w[i, j] + _best_value(sub)
            if val >= best - tol:
                fixed.append((i, j))
                acc += w[i, j]
                cols_left.remove(j)
                break
        else:  # round-off only
            j = cols_left[0]
            fixed.append((i, j))
            acc += w[i, j]
            cols_left.remove(j)
    if transpose:
        fixed = sorted((j, i) for i, j in fixed)
    return fixed


def solve(instance: NetworkInstance, config: SolverConfig) -> SolveReport:
    """Optimal allocation when each group and each channel take at most one partner."""
    if config.c1 != 1 or config.c2 != 1:
        raise ValueError("matching solves only the C1 = C2 = 1 case")
    t0 = time.perf_counter()
    K, M = instance.K, instance.M
    W = build_weights(instance, config)
    rmax = instance.cell_rate_max()
    # pad to square: extra groups stand for "channel not shared" and extra
    # channels for "group not admitted"
    n = max(K, M)
    full = np.zeros((n, n))
    full[:K, :M] = W.w
    full[K:, :M] = rmax
    match = hungarian_max(full)
    y = np.zeros((K, M), dtype=np.int8)
    p_d2d = np.zeros((K, M))
    p_cell = np.full(M, instance.constants.p_max_cell)
    for k, m in match:
        if k < K and m < M and W.candidate[k, m]:
            y[k, m] = 1
            p_d2d[k, m], p_cell[m] = W.pair_powers[k][m]
    assignment = Assignment(y, p_d2d, p_cell)
    rep = evaluate(instance, assignment, config)
    total = float(sum(full[k, m] for k, m in match))
    return SolveReport("matching", assignment, rep, total, time.perf_counter() - t0,
                       True, 0.0, W)
