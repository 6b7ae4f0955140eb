"""Exact joint allocation by generalized Benders decomposition.

The binary reuse pattern ``Y`` is fixed in the primal, which is then a
convex program; its multipliers give a Lagrangian cut that is affine in
``Y`` because every coupling constraint is.  A binary master over ``Y``
collects the cuts and proposes the next pattern.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from . import convex
from .model import (Assignment, NetworkInstance, SolveReport, SolverConfig, evaluate)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class Cut:
    """``eta <= constant + coeffs . y`` or ``constant + coeffs . y <= 0``."""

    kind: str
    constant: float
    coeffs: np.ndarray
    source_iteration: int = 0

    def __post_init__(self):
        if self.kind not in ("optimality", "feasibility"):
            raise ValueError(f"unknown cut kind {self.kind!r}")
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or not np.isfinite(c).all() or not math.isfinite(self.constant):
            raise ValueError("cut coefficients must be a finite K x M array")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def value(self, y) -> float:
        return float(self.constant + np.sum(self.coeffs * np.asarray(y)))


@dataclass
class GbdState:
    iteration: int = 0
    UBD: float = math.inf
    LBD: float = -math.inf
    cuts: list = field(default_factory=list)
    incumbent: Optional[Assignment] = None
    history: list = field(default_factory=list)
    proven_optimal: bool = False
    termination: str = ""

    def record(self, kind, y):
        self.history.append((self.iteration, self.UBD, self.LBD, kind,
                             tuple(int(v) for v in np.ravel(y))))

    def bounds_monotone(self, tol: float = 0.0) -> bool:
        ub = [h[1] for h in self.history]
        lb = [h[2] for h in self.history]
        return (all(b <= a + tol for a, b in zip(ub, ub[1:]))
                and all(b >= a - tol for a, b in zip(lb, lb[1:])))

    def log_text(self, sep: str = ",") -> str:
        lines = [sep.join(("i", "UBD", "LBD", "cut", "Y"))]
        for i, ub, lb, kind, y in self.history:
            lines.append(sep.join((str(i), f"{ub:.10g}", f"{lb:.10g}", kind,
                                   "".join(map(str, y)))))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# cuts
# ---------------------------------------------------------------------------

def optimality_cut(solution: convex.PrimalSolution, y_fixed, iteration: int = 0) -> Cut:
    """Lagrangian of the primal at its optimum, written as a function of ``Y``.

    With ``G_q(X, Y) = G1_q(X) + a_q . Y`` the cut is
    ``eta <= f(X*) - sum_q lam_q G1_q(X*) - sum_q lam_q a_q . Y``.
    """
    if not solution.optimal:
        raise ValueError("optimality cut needs an optimal primal solution")
    prog = solution.program
    lam = solution.multipliers
    if lam is None or lam.shape != (prog.Q,):
        raise ValueError("one multiplier per constraint row is required")
    y_fixed = np.asarray(y_fixed)
    g1 = convex.constraint_values(prog, solution.point)
    constant = solution.objective - float(lam @ g1)
    coeffs = -(prog.y_coef.T @ lam).reshape(y_fixed.shape)
    return Cut("optimality", constant, coeffs, iteration)


def feasibility_cut(fs: convex.FeasibilitySolution, y_fixed, iteration: int = 0) -> Cut:
    """``sum_q lam_q G_q(X*, Y) <= 0`` with the normalised multipliers of the l1 problem.

    Any feasible pattern satisfies it, while at the pattern that produced it
    the left side equals the weighted violation and is positive.
    """
    if fs.alpha_sum <= 0.0:
        raise ValueError("feasibility cut requested for a feasible pattern")
    prog = fs.program
    y_fixed = np.asarray(y_fixed)
    g1 = convex.constraint_values(prog, fs.point)[fs.rows]
    constant = float(fs.multipliers @ g1) + fs.box_term
    coeffs = (prog.y_coef[fs.rows].T @ fs.multipliers).reshape(y_fixed.shape)
    return Cut("feasibility", constant, coeffs, iteration)


# ---------------------------------------------------------------------------
# master problem
# ---------------------------------------------------------------------------

@dataclass
class MasterResult:
    status: str
    eta: float = -math.inf
    y: Optional[np.ndarray] = None
    nodes: int = 0

    @property
    def infeasible(self) -> bool:
        return self.status == "infeasible"


def _master_arrays(cuts, K, M, c1, c2):
    n = K * M
    opt = [c for c in cuts if c.kind == "optimality"]
    feas = [c for c in cuts if c.kind == "feasibility"]
    rows, lo, hi = [], [], []
    for c in opt:                       # eta - coeffs.y <= constant
        rows.append(np.r_[-c.coeffs.ravel(), 1.0])
        hi.append(c.constant)
    for c in feas:                      # coeffs.y <= -constant
        rows.append(np.r_[c.coeffs.ravel(), 0.0])
        hi.append(-c.constant + FEAS_TOL)
    for k in range(K):
        r = np.zeros(n + 1)
        r[k * M:(k + 1) * M] = 1.0
        rows.append(r)
        hi.append(c1)
    for m in range(M):
        r = np.zeros(n + 1)
        r[m:n:M] = 1.0
        rows.append(r)
        hi.append(c2)
    return np.array(rows), np.array(hi)


def cap_feasible_patterns(K, M, c1, c2, fixed_zero=None):
    """Every binary ``K x M`` pattern within the row/column caps, as rows of a matrix."""
    free = np.ones((K, M), dtype=bool) if fixed_zero is None else ~np.asarray(fixed_zero, bool)
    row_opts = []
    for k in range(K):
        cols = np.flatnonzero(free[k])
        opts = []
        for size in range(min(c1, cols.size) + 1):
            for sub in itertools.combinations(cols, size):
                r = np.zeros(M, dtype=np.int8)
                r[list(sub)] = 1
                opts.append(r)
        row_opts.append(opts)
    out = []

    def rec(k, acc, colsum):
        if k == K:
            out.append(np.concatenate(acc) if acc else np.zeros(0, np.int8))
            return
        for r in row_opts[k]:
            cs = colsum + r
            if (cs <= c2).all():
                rec(k + 1, acc + [r], cs)

    rec(0, [], np.zeros(M, dtype=int))
    return np.array(out, dtype=np.int8).reshape(len(out), K * M)


def _master_enumerate(cuts, K, M, c1, c2, fixed_zero):
    Ys = cap_feasible_patterns(K, M, c1, c2, fixed_zero).astype(float)
    ok = np.ones(len(Ys), dtype=bool)
    eta = np.full(len(Ys), math.inf)
    for c in cuts:
        v = c.constant + Ys @ c.coeffs.ravel()
        if c.kind == "feasibility":
            ok &= v <= FEAS_TOL
        else:
            eta = np.minimum(eta, v)
    if not ok.any():
        return MasterResult("infeasible", nodes=len(Ys))
    eta = np.where(ok, eta, -math.inf)
    # first maximiser in lexicographic order of the enumeration
    i = int(np.argmax(eta))
    return MasterResult("optimal", float(eta[i]), Ys[i].reshape(K, M).astype(np.int8), len(Ys))


def _master_bnb(cuts, K, M, c1, c2, fixed_zero):
    n = K * M
    A, hi = _master_arrays(cuts, K, M, c1, c2)
    c = np.r_[np.zeros(n), -1.0]
    lo0 = np.zeros(n)
    hi0 = np.ones(n)
    if fixed_zero is not None:
        hi0[np.asarray(fixed_zero, bool).ravel()] = 0.0
    best_eta, best_y = -math.inf, None
    counter = itertools.count()
    heap = [(-math.inf, next(counter), lo0, hi0)]
    nodes = 0
    int_tol = 1e-7
    while heap:
        negbound, _, lo, up = heapq.heappop(heap)
        if -negbound <= best_eta + 1e-9:
            continue
        nodes += 1
        res = linprog(c, A_ub=A, b_ub=hi,
                      bounds=list(zip(lo, up)) + [(None, None)], method="highs")
        if res.status != 0:
            continue
        bound = -res.fun
        if bound <= best_eta + 1e-9:
            continue
        yv = res.x[:n]
        frac = np.abs(yv - np.round(yv))
        if frac.max() <= int_tol:
            best_eta, best_y = bound, np.round(yv).astype(np.int8)
            continue
        # most fractional variable, ties to the lowest (k, m)
        dist = np.abs(yv - 0.5)
        j = int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])
        for v in (1.0, 0.0):
            l2, u2 = lo.copy(), up.copy()
            l2[j] = u2[j] = v
            heapq.heappush(heap, (-bound, next(counter), l2, u2))
    if best_y is None:
        return MasterResult("infeasible", nodes=nodes)
    return MasterResult("optimal", float(best_eta), best_y.reshape(K, M), nodes)


def _master_highs(cuts, K, M, c1, c2, fixed_zero):
    n = K * M
    A, hi = _master_arrays(cuts, K, M, c1, c2)
    up = np.ones(n)
    if fixed_zero is not None:
        up[np.asarray(fixed_zero, bool).ravel()] = 0.0
    res = milp(np.r_[np.zeros(n), -1.0],
               constraints=LinearConstraint(A, -np.inf, hi),
               integrality=np.r_[np.ones(n), 0.0],
               bounds=Bounds(np.r_[np.zeros(n), -np.inf], np.r_[up, np.inf]),
               options={"mip_rel_gap": 0.0, "presolve": True})
    if res.status == 2 or res.x is None:
        return MasterResult("infeasible")
    if res.status != 0:
        raise RuntimeError(f"master MILP failed: {res.message}")
    y = np.round(res.x[:n]).astype(np.int8).reshape(K, M)
    # eta from the cuts themselves so it is exact for the rounded pattern
    eta = min(c.value(y) for c in cuts if c.kind == "optimality")
    return MasterResult("optimal", float(eta), y, int(getattr(res, "mip_node_count", 0) or 0))


MASTER_METHODS = {"enumerate": _master_enumerate, "bnb": _master_bnb, "highs": _master_highs}


def solve_relaxed_master(cuts, K, M, c1, c2, fixed_zero=None, method: str = "auto") -> MasterResult:
    """Maximise ``eta`` over binary ``Y`` within the caps and all cuts.

    ``method`` is ``"enumerate"`` (exhaustive, small problems only),
    ``"bnb"`` (best-first branch and bound over LP relaxations), ``"highs"``
    (the HiGHS MILP solver) or ``"auto"``.
    """
    if not any(c.kind == "optimality" for c in cuts):
        raise ValueError("the master is unbounded without an optimality cut")
    if method == "auto":
        method = "enumerate" if K * M <= 12 else "highs"
    if method == "enumerate" and K * M > 20:
        raise ValueError("exhaustive master limited to K*M <= 20")
    return MASTER_METHODS[method](cuts, K, M, c1, c2, fixed_zero)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def solve(instance: NetworkInstance, config: SolverConfig, verbose: bool = False,
          master: str = "auto", stream=None) -> SolveReport:
    """Optimal reuse pattern and powers.

    Starts from the cellular-only pattern, which is always feasible, and
    stops when ``UBD - LBD <= config.gap_tol``, after ``config.max_iter``
    primal solves, or once ``config.time_limit`` seconds have passed.  The
    report's ``proven_optimal`` is False unless the gap closed.
    """
    t0 = time.perf_counter()
    K, M = instance.K, instance.M
    state = GbdState()
    cellular = Assignment.cellular_only(instance)
    if K == 0:
        state.incumbent = cellular
        rep = evaluate(instance, cellular, config)
        state.UBD = state.LBD = rep.R_sum
        state.proven_optimal = True
        state.termination = "no D2D groups"
        return SolveReport("gbd", cellular, rep, rep.R_sum, time.perf_counter() - t0,
                           True, 0.0, state)
    consts = convex.primal_constants(instance, config)
    fixed_zero = ~consts.admissible
    y = np.zeros((K, M), dtype=np.int8)
    visited = set()
    best_sol = None
    out = stream or sys.stderr
    if verbose:
        print("i,UBD,LBD,cut,Y", file=out)
    while True:
        state.iteration += 1
        sol = convex.solve_primal(instance, y, config, consts)
        if sol.optimal:
            if sol.objective > state.LBD:
                state.LBD = sol.objective
                best_sol = sol
            cut = optimality_cut(sol, y, state.iteration)
        elif not y.any():
            # with no reuse the CUs cannot meet their own targets, and reuse
            # only adds interference
            state.termination = "infeasible without D2D reuse"
            state.record("feasibility", y)
            break
        else:
            fs = convex.solve_feasibility(instance, y, config, consts)
            cut = feasibility_cut(fs, y, state.iteration)
        state.cuts.append(cut)
        visited.add(y.tobytes())
        res = solve_relaxed_master(state.cuts, K, M, config.c1, config.c2, fixed_zero, master)
        if res.infeasible:
            state.record(cut.kind, y)
            state.proven_optimal = True
            state.termination = "master infeasible"
            break
        state.UBD = min(state.UBD, max(res.eta, state.LBD))
        state.record(cut.kind, y)
        if verbose:
            i, ub, lb, kind, yy = state.history[-1]
            print(f"{i},{ub:.10g},{lb:.10g},{kind},{''.join(map(str, yy))}", file=out)
        if state.UBD - state.LBD <= config.gap_tol:
            state.proven_optimal = True
            state.termination = "gap closed"
            break
        if res.y.tobytes() in visited:
            # cuts at a visited pattern bound eta by its own value, so only
            # round-off can bring us here
            state.termination = "master repeated a visited pattern"
            break
        if state.iteration >= config.max_iter:
            state.termination = "iteration cap"
            break
        if config.time_limit is not None and time.perf_counter() - t0 >= config.time_limit:
            state.termination = "time limit"
            break
        y = res.y
    if best_sol is None:
        assignment = cellular
    else:
        assignment = convex.primal_assignment(instance, best_sol)
    state.incumbent = assignment
    rep = evaluate(instance, assignment, config)
    gap = state.UBD - state.LBD
    return SolveReport("gbd", assignment, rep, state.LBD, time.perf_counter() - t0,
                       state.proven_optimal, gap, state,
                       {"iterations": state.iteration, "termination": state.termination})
