"""Continuous power-control subproblems in log variables.

With the channel pattern fixed, every subproblem is a geometric program.
Writing each power as ``P = exp(rho)`` turns posynomial constraints into
log-sum-exp inequalities, which a log-barrier method solves together with
the Lagrange multipliers needed by the Benders cuts.

A :class:`ConvexProgram` keeps every constraint in the form::

    g_q(x) = A_q x + b_q + log(sum_t exp(x[v_t] + o_t)) <= 0

where the log-sum-exp part may be empty, a term with ``v_t = -1`` is the
constant ``exp(o_t)``, and ``b = b_free + Ycoef @ vec(Y)`` holds all of the
dependence on the binary reuse pattern.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import nnls

from .model import (LN2, Assignment, NetworkInstance, SolverConfig)

log = logging.getLogger(__name__)

BOX = "box"


class SolverError(RuntimeError):
    """Interior-point iteration failed to converge."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals or {}


# ---------------------------------------------------------------------------
# program representation
# ---------------------------------------------------------------------------

@dataclass
class ConvexProgram:
    objective: np.ndarray
    A: sp.csr_matrix
    b_free: np.ndarray
    y_coef: sp.csr_matrix
    y: np.ndarray
    term_row: np.ndarray
    term_var: np.ndarray
    term_off: np.ndarray
    tags: list
    scale: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    index: dict = field(default_factory=dict)
    x0: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.objective.shape[0])

    @property
    def Q(self) -> int:
        return len(self.tags)

    @property
    def b(self) -> np.ndarray:
        return self.b_free + self.y_coef @ self.y

    def tag_index(self) -> dict:
        return {t: q for q, t in enumerate(self.tags)}

    def rows_of(self, kind: str) -> np.ndarray:
        return np.array([q for q, t in enumerate(self.tags) if t[0] == kind], dtype=int)

    def with_b_shift(self, q: int, delta: float) -> "ConvexProgram":
        """Copy with constraint ``q`` loosened by ``delta`` (``g_q <= delta``)."""
        b_free = self.b_free.copy()
        b_free[q] -= delta
        return _replace(self, b_free=b_free)

    def with_y(self, y) -> "ConvexProgram":
        return _replace(self, y=np.asarray(y, dtype=float).ravel())

    def objective_value(self, x) -> float:
        return float(self.objective @ x)


def _replace(prog, **kw):
    d = dict(prog.__dict__)
    d.update(kw)
    return ConvexProgram(**d)


class ProgramBuilder:
    """Accumulates constraint rows for a :class:`ConvexProgram`."""

    def __init__(self, n_y: int = 0):
        self.n = 0
        self.n_y = n_y
        self.lower: list = []
        self.upper: list = []
        self.index: dict = {}
        self._A: list = []
        self._b: list = []
        self._yc: list = []
        self._terms: list = []
        self.tags: list = []
        self.scale: list = []

    def var(self, name, shape, lo, hi):
        size = int(np.prod(shape)) if shape else 1
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.lower += list(np.broadcast_to(np.asarray(lo, dtype=float).ravel(), (size,)))
        self.upper += list(np.broadcast_to(np.asarray(hi, dtype=float).ravel(), (size,)))
        self.index[name] = idx
        return idx

    def row(self, tag, lin=(), const=0.0, terms=(), ydep=(), scale=1.0):
        q = len(self.tags)
        for j, a in lin:
            self._A.append((q, int(j), float(a)))
        for i, a in ydep:
            self._yc.append((q, int(i), float(a)))
        for v, o in terms:
            self._terms.append((q, int(v), float(o)))
        self._b.append(float(const))
        self.tags.append(tag)
        self.scale.append(float(scale))
        return q

    def build(self, objective, y=None, x0=None) -> ConvexProgram:
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        for j in range(self.n):
            self.row((BOX, j, "lo"), [(j, -1.0)], lo[j])
            self.row((BOX, j, "hi"), [(j, 1.0)], -hi[j])
        Q = len(self.tags)
        if self._A:
            r, c, v = zip(*self._A)
        else:
            r, c, v = (), (), ()
        A = sp.csr_matrix((v, (r, c)), shape=(Q, self.n))
        if self._yc:
            r, c, v = zip(*self._yc)
        else:
            r, c, v = (), (), ()
        yc = sp.csr_matrix((v, (r, c)), shape=(Q, self.n_y))
        terms = sorted(self._terms)
        tr = np.array([t[0] for t in terms], dtype=int)
        tv = np.array([t[1] for t in terms], dtype=int)
        to = np.array([t[2] for t in terms], dtype=float)
        y = np.zeros(self.n_y) if y is None else np.asarray(y, dtype=float).ravel()
        return ConvexProgram(
            objective=np.asarray(objective, dtype=float), A=A,
            b_free=np.array(self._b), y_coef=yc, y=y,
            term_row=tr, term_var=tv, term_off=to, tags=list(self.tags),
            scale=np.array(self.scale), lower=lo, upper=hi,
            index=dict(self.index), x0=x0,
        )


# ---------------------------------------------------------------------------
# barrier method
# ---------------------------------------------------------------------------

class _Oracle:
    """Vectorised value / gradient / Hessian of the constraint functions."""

    def __init__(self, prog: ConvexProgram):
        self.Q, self.n = prog.Q, prog.n
        self.A = prog.A.toarray() if sp.issparse(prog.A) else np.asarray(prog.A)
        self.tr, self.tv, self.to = prog.term_row, prog.term_var, prog.term_off
        self.lse_rows = np.zeros(0, dtype=int)
        if self.tr.size:
            starts = np.flatnonzero(np.r_[True, np.diff(self.tr) != 0])
            self.starts = starts
            self.lse_rows = self.tr[starts]
            self.counts = np.diff(np.r_[starts, self.tr.size])
            self.has_var = self.tv >= 0
            self.var_safe = np.where(self.has_var, self.tv, 0)
            # position of each variable term inside the dense block of lse rows
            local = np.searchsorted(self.lse_rows, self.tr[self.has_var])
            self.flat = local * self.n + self.tv[self.has_var]
            self.unique = np.unique(self.flat).size == self.flat.size

    def value(self, x, b):
        g = self.A @ x + b
        p = None
        if self.tr.size:
            z = np.where(self.has_var, x[self.var_safe], 0.0) + self.to
            zmax = np.maximum.reduceat(z, self.starts)
            e = np.exp(z - np.repeat(zmax, self.counts))
            ssum = np.add.reduceat(e, self.starts)
            g[self.lse_rows] += zmax + np.log(ssum)
            p = e / np.repeat(ssum, self.counts)
        return g, p

    def P(self, p):
        """Softmax weights as a dense (lse rows) x n block."""
        Pm = np.zeros(self.lse_rows.size * self.n)
        if self.unique:
            Pm[self.flat] = p[self.has_var]
        else:
            np.add.at(Pm, self.flat, p[self.has_var])
        return Pm.reshape(self.lse_rows.size, self.n)

    def jacobian(self, p):
        J = self.A.copy()
        if p is None:
            return J, None
        Pm = self.P(p)
        J[self.lse_rows] += Pm
        return J, Pm


def _barrier_terms(oracle, x, b, t, w, with_hessian=True):
    g, p = oracle.value(x, b)
    s = -g
    if (s <= 0).any():
        return None
    J, Pm = oracle.jacobian(p)
    inv = 1.0 / s
    grad = -t * w + J.T @ inv
    if not with_hessian:
        return g, grad, None
    Jd = J * inv[:, None]
    H = Jd.T @ Jd
    if Pm is not None:
        il = inv[oracle.lse_rows]
        H[np.diag_indices_from(H)] += Pm.T @ il
        Pd = Pm * np.sqrt(il)[:, None]
        H -= Pd.T @ Pd
    return g, grad, H


def _newton_direction(H, grad):
    # scale to unit diagonal so very different constraint activities stay solvable
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]
    gs = grad / d
    try:
        c = la.cho_factor(Hs, check_finite=False)
        dx = -la.cho_solve(c, gs, check_finite=False)
    except la.LinAlgError:
        w, V = np.linalg.eigh(Hs)
        w = np.maximum(w, 1e-12 * max(w.max(), 1.0))
        dx = -(V @ ((V.T @ gs) / w))
    return dx / d


@dataclass
class BarrierResult:
    x: np.ndarray
    t: float
    slack: np.ndarray
    newton_steps: int
    trace: list


def _barrier(prog: ConvexProgram, w, x0, b, t0=1.0, mu=10.0, gap=1e-8,
             max_newton=500, stop=None, trace=False, center_tol=1e-9, on_center=None):
    """Maximise ``w @ x`` subject to ``g(x) <= 0`` from a strictly feasible ``x0``."""
    oracle = _Oracle(prog)
    x = np.array(x0, dtype=float)
    t = t0
    Q = prog.Q
    steps = 0
    tr = []

    def F(xx):
        g, _ = oracle.value(xx, b)
        if (g >= 0).any():
            return math.inf
        return -t * (w @ xx) - np.sum(np.log(-g))

    while True:
        inner = 0
        while True:
            terms = _barrier_terms(oracle, x, b, t, w)
            if terms is None:
                raise SolverError("iterate left the domain")
            g, grad, H = terms
            dx = _newton_direction(H, grad)
            lam2 = float(-(grad @ dx))
            # the second test is the floor set by round-off in t * objective
            # intermediate points only need rough centering; the last one is exact
            tol_here = center_tol if Q / t <= gap else max(center_tol, 1e-3)
            if lam2 / 2.0 <= tol_here or lam2 / (2.0 * t) <= 1e-15:
                break
            # a stalled centering costs about lam2 / (2 t) in objective,
            # negligible next to the current gap (the target gap at the end)
            if inner >= 50 and lam2 / (2.0 * t) <= 1e-3 * max(gap, Q / t):
                break
            steps += 1
            inner += 1
            if steps > max_newton:
                res = {"t": t, "newton_decrement": lam2, "gap": Q / t}
                raise SolverError("barrier method did not converge", res)
            step = 1.0
            # keep strictly feasible
            while True:
                gn, _ = oracle.value(x + step * dx, b)
                if (gn < 0).all():
                    break
                step *= 0.5
                if step < 1e-20:
                    break
            if lam2 > 0.25 ** 2:
                f0 = F(x)
                while F(x + step * dx) > f0 - 0.1 * step * lam2 and step > 1e-20:
                    step *= 0.5
            if step < 1e-20:
                break
            x = x + step * dx
            if stop is not None and stop(x):
                return BarrierResult(x, t, -oracle.value(x, b)[0], steps, tr)
        if trace:
            tr.append((t, Q / t, float(w @ x), steps))
        if (stop is not None and stop(x)) or (on_center is not None and on_center(x, t)):
            return BarrierResult(x, t, -oracle.value(x, b)[0], steps, tr)
        if Q / t <= gap:
            break
        # predictor along the central path tangent, H dx/dt = w
        dxdt = _newton_direction(H, -w)
        t_next = t * mu
        step = (t_next - t)
        t = t_next
        f_cur = F(x)
        while step > 1e-12 * t:
            xp = x + step * dxdt
            if F(xp) < f_cur:
                x = xp
                break
            step *= 0.5
    return BarrierResult(x, t, -oracle.value(x, b)[0], steps, tr)


# ---------------------------------------------------------------------------
# solve / phase I
# ---------------------------------------------------------------------------

@dataclass
class PrimalSolution:
    """Optimum of a program for a fixed reuse pattern.

    ``multipliers`` are per constraint row, for the log-form rows the program
    stores; :meth:`original_multipliers` rescales posynomial rows to the units
    of ``h(x) - c <= 0``.
    """

    status: str
    point: Optional[np.ndarray] = None
    objective: float = -math.inf
    multipliers: Optional[np.ndarray] = None
    slack: Optional[np.ndarray] = None
    kkt: dict = field(default_factory=dict)
    newton_steps: int = 0
    program: Optional[ConvexProgram] = None
    trace: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def original_multipliers(self) -> np.ndarray:
        return self.multipliers / self.program.scale

    def values(self, name) -> np.ndarray:
        return self.point[self.program.index[name]]


def constraint_values(prog: ConvexProgram, x, y=None) -> np.ndarray:
    """``g(x)`` with the binary pattern replaced by ``y`` (zero pattern by default)."""
    b = prog.b_free if y is None else prog.b_free + prog.y_coef @ np.asarray(y, dtype=float).ravel()
    return _Oracle(prog).value(np.asarray(x, dtype=float), b)[0]


def kkt_residuals(prog: ConvexProgram, x, lam) -> dict:
    oracle = _Oracle(prog)
    g, p = oracle.value(x, prog.b)
    J, _ = oracle.jacobian(p)
    stat = prog.objective - J.T @ lam
    return {
        "stationarity": float(np.abs(stat).max()) if stat.size else 0.0,
        "complementarity": float(np.abs(lam * g).max()) if g.size else 0.0,
        "primal": float(max(g.max(), 0.0)) if g.size else 0.0,
        "dual": float(max(-lam.min(), 0.0)) if lam.size else 0.0,
    }


def _polish_multipliers(prog, x, lam, slack, gap, active_tol=1e-4):
    """Refit multipliers on the active rows by non-negative least squares.

    ``1 / (t s)`` carries a stationarity error of order ``|grad F| / t``,
    which round-off keeps well above the KKT tolerance once ``t`` is large.
    Rows with almost parallel gradients are told apart by also penalising
    ``lam_q s_q`` with weight ``1 / sqrt(gap)``, so a row with visible
    slack does not take weight from a tight one.  The refit is kept only
    when it lowers the KKT residual.
    """
    act = np.flatnonzero(slack <= active_tol)
    if act.size == 0:
        return lam
    oracle = _Oracle(prog)
    _, p = oracle.value(x, prog.b)
    J, _ = oracle.jacobian(p)
    JA = J[act]
    kappa = 1.0 / math.sqrt(gap)
    lhs = np.vstack([JA.T, np.diag(kappa * slack[act])])
    rhs = np.r_[prog.objective, np.zeros(act.size)]
    try:
        coef, _ = nnls(lhs, rhs, maxiter=50 * max(act.size, 1))
    except RuntimeError:
        return lam
    ref = np.zeros_like(lam)
    ref[act] = coef
    g = -slack
    before = max(np.abs(prog.objective - J.T @ lam).max(), np.abs(lam * g).max())
    after = max(np.abs(prog.objective - J.T @ ref).max(), np.abs(ref * g).max())
    return ref if after < before else lam


def _box_start(prog: ConvexProgram) -> np.ndarray:
    if prog.x0 is not None:
        x = np.clip(prog.x0, prog.lower + 1e-3, prog.upper - 1e-3)
        return x
    return 0.5 * (prog.lower + prog.upper)


def find_strictly_feasible(prog: ConvexProgram, mu=10.0, max_newton=500):
    """Phase I: minimise the common slack ``s`` of all non-box rows.

    Returns a strictly feasible point, or ``None`` when the optimal slack is
    certified non-negative.
    """
    x0 = _box_start(prog)
    oracle = _Oracle(prog)
    b = prog.b
    g0, _ = oracle.value(x0, b)
    is_box = np.array([t[0] == BOX for t in prog.tags])
    if (g0 < 0).all():
        return x0
    # augmented program in (x, s): g_q(x) - s <= 0 for non-box rows, box rows unchanged
    n = prog.n
    s_col = sp.csr_matrix((-(~is_box).astype(float), (np.arange(prog.Q), np.zeros(prog.Q, dtype=int))),
                          shape=(prog.Q, 1))
    A = sp.hstack([prog.A, s_col]).tocsr()
    s_hi = max(float(g0[~is_box].max()), 0.0) + 10.0
    extra = sp.csr_matrix(([1.0, -1.0], ([0, 1], [n, n])), shape=(2, n + 1))
    aug = ConvexProgram(
        objective=np.r_[np.zeros(n), -1.0],
        A=sp.vstack([A, extra]).tocsr(),
        b_free=np.r_[b, -s_hi - 1.0, -1e6], y_coef=sp.csr_matrix((prog.Q + 2, 0)), y=np.zeros(0),
        term_row=prog.term_row, term_var=prog.term_var, term_off=prog.term_off,
        tags=list(prog.tags) + [("phase1", "hi"), ("phase1", "lo")],
        scale=np.ones(prog.Q + 2), lower=np.r_[prog.lower, -1e6], upper=np.r_[prog.upper, s_hi + 1.0],
    )
    z0 = np.r_[x0, s_hi]

    def done(z):
        return z[-1] < -1e-9 and (oracle.value(z[:-1], b)[0] < 0).all()

    # on the central path the optimal slack is at least s - Q / t
    res = _barrier(aug, aug.objective, z0, aug.b, t0=1.0, mu=mu, gap=1e-10,
                   max_newton=max_newton, stop=done,
                   on_center=lambda z, t: z[-1] - aug.Q / t > 0.0)
    z = res.x
    if done(z):
        return z[:-1]
    return None


def solve(prog: ConvexProgram, tol: float = 1e-8, mu: float = 10.0,
          max_newton: int = 500, x0=None, trace: bool = False) -> PrimalSolution:
    """Maximise ``prog.objective @ x`` by the log-barrier method.

    Parameters
    ----------
    prog : ConvexProgram
    tol : float
        Duality-gap target ``Q / t``.
    x0 : array, optional
        Strictly feasible starting point; phase I runs when omitted.

    Returns
    -------
    PrimalSolution
        ``status`` is ``"infeasible"`` when phase I certifies that no
        strictly feasible point exists.
    """
    if x0 is None:
        x0 = find_strictly_feasible(prog, mu=mu, max_newton=max_newton)
        if x0 is None:
            return PrimalSolution(status="infeasible", program=prog)
    res = _barrier(prog, prog.objective, x0, prog.b, t0=1.0, mu=mu, gap=tol,
                   max_newton=max_newton, trace=trace)
    lam = _polish_multipliers(prog, res.x, 1.0 / (res.t * res.slack), res.slack, prog.Q / res.t)
    kkt = kkt_residuals(prog, res.x, lam)
    return PrimalSolution(status="optimal", point=res.x, objective=prog.objective_value(res.x),
                          multipliers=lam, slack=res.slack, kkt=kkt,
                          newton_steps=res.newton_steps, program=prog, trace=res.trace)


def format_trace(sol: PrimalSolution, sep: str = ",") -> str:
    """Delimited per-outer-iteration log: ``t``, duality gap, objective, cumulative Newton steps."""
    lines = [sep.join(("t", "gap", "objective", "newton_steps"))]
    lines += [sep.join(f"{v:.10g}" for v in row) for row in sol.trace]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# constants that scale with the instance
# ---------------------------------------------------------------------------

def single_link_rate_bounds(instance: NetworkInstance) -> np.ndarray:
    """Interference-free D2D rate of every (k, m) at full power."""
    c = instance.constants
    K, M = instance.K, instance.M
    U = np.zeros((K, M))
    for k in range(K):
        gmin = instance.gains.g_d2d_self[k].min(axis=1)
        U[k] = instance.groups[k].size * np.log2(c.p_max_d2d * gmin / c.noise_power)
    return U


def big_constant(instance: NetworkInstance, config: SolverConfig) -> float:
    if config.big_c is not None:
        return float(config.big_c)
    rates = [instance.cell_rate_max().max()]
    if instance.K:
        rates.append(single_link_rate_bounds(instance).max())
    return 100.0 * max(max(rates), 1.0)


@dataclass(frozen=True)
class PrimalConstants:
    """Big constants of the primal, per (k, m) where they gate a binary.

    ``admissible[k, m]`` is False when group ``k`` cannot meet the SINR
    targets on channel ``m`` even without other groups, which rules the
    pair out of every feasible pattern.
    """

    link: float
    eps: float
    gate_rate: np.ndarray
    gate_active: np.ndarray
    sinr: np.ndarray
    admissible: np.ndarray


def primal_constants(instance: NetworkInstance, config: SolverConfig) -> PrimalConstants:
    c = instance.constants
    G = instance.gains
    K, M = instance.K, instance.M
    eps = config.epsilon
    Cl = big_constant(instance, config)
    rho_min = math.log(eps / Cl)
    gate_rate = np.zeros((K, M))
    sinr = np.zeros((K, M))
    U = single_link_rate_bounds(instance)
    for k in range(K):
        D = instance.groups[k].size
        # lowest possible upper bound on log(beta) of (k, m)
        cross = np.delete(G.g_d2d_cross[k], k, axis=0).sum(axis=0) * c.p_max_d2d
        interf = c.noise_power + c.p_max_cell * G.g_c2d[k] + cross[None, :]
        b_lo = np.log(G.g_d2d_self[k] / interf).min(axis=1)
        deficit = -(rho_min + b_lo)
        gate_rate[k] = D * np.maximum(deficit, 0.0) / LN2 + 1.0
        sinr[k] = max(math.log(c.gamma_d2d_th), 0.0) + np.maximum(deficit, 0.0) + 1.0
    # no pattern lets a pair beat its best D2D rate when alone on the channel
    admissible = np.zeros((K, M), dtype=bool)
    gate_active = np.maximum(U, 0.0) + 1.0
    for k in range(K):
        for m in range(M):
            v = pair_rate_bound(instance, k, m, config)
            if v is not None:
                admissible[k, m] = True
                gate_active[k, m] = max(v, 0.0) + 1e-3
    return PrimalConstants(Cl, eps, gate_rate, gate_active, sinr, admissible)


# ---------------------------------------------------------------------------
# primal (fixed Y) program
# ---------------------------------------------------------------------------

def _check_y(instance, y, config):
    y = np.asarray(y)
    if y.shape != (instance.K, instance.M):
        raise ValueError(f"Y has shape {y.shape}, expected {(instance.K, instance.M)}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("Y must be binary")
    if (y.sum(axis=1) > config.c1).any() or (y.sum(axis=0) > config.c2).any():
        raise ValueError("Y violates the per-group (C1) or per-channel (C2) cap")
    return y.astype(float)


def build_primal(instance: NetworkInstance, y, config: SolverConfig,
                 consts: Optional[PrimalConstants] = None) -> ConvexProgram:
    """Fixed-Y primal in log variables with every binary-gated constraint kept.

    Variables: ``rho[k,m] = ln P_d2d``, ``sig[m] = ln P_cell``, ``b[k,m]`` and
    ``c[m]`` the log channel qualities, ``r[k,m]`` the per-channel D2D rate.
    Every dependence on ``Y`` is affine and recorded in ``y_coef`` so the
    Lagrangian can be re-evaluated at any other pattern.
    """
    y = _check_y(instance, y, config)
    cst = consts or primal_constants(instance, config)
    c = instance.constants
    G = instance.gains
    K, M = instance.K, instance.M
    sizes = instance.group_sizes
    eps, Cl = cst.eps, cst.link
    L_eps = math.log((1.0 + eps) / eps)
    ln_noise = math.log(c.noise_power)
    ln_pd, ln_pc = math.log(c.p_max_d2d), math.log(c.p_max_cell)

    B = ProgramBuilder(n_y=K * M)
    rho = B.var("rho", (K, M), math.log(eps / Cl) - 1.0, ln_pd + 1.0)
    sig = B.var("sig", (M,), ln_pc - 60.0, ln_pc + 1.0)
    bv = B.var("b", (K, M), -200.0, 200.0)
    cv = B.var("c", (M,), -200.0, 200.0)
    r = B.var("r", (K, M), -1e3, cst.gate_active + 1.0)

    yi = lambda k, m: k * M + m  # noqa: E731
    for k in range(K):
        D = sizes[k]
        for m in range(M):
            i = yi(k, m)
            C1, C2, Cs = cst.gate_rate[k, m], cst.gate_active[k, m], cst.sinr[k, m]
            B.row(("gate_rate", k, m), [(r[k, m], 1.0), (rho[k, m], -D / LN2), (bv[k, m], -D / LN2)],
                  -C1, ydep=[(i, C1)])
            B.row(("gate_active", k, m), [(r[k, m], 1.0)], 0.0, ydep=[(i, -C2)])
            # P / Pmax <= y + eps   with ln(y + eps) exact on {0, 1}
            B.row(("link_upper", k, m), [(rho[k, m], 1.0)], -ln_pd - math.log(eps),
                  ydep=[(i, -L_eps)], scale=c.p_max_d2d * (y[k, m] + eps))
            # y + eps <= C * P
            B.row(("link_lower", k, m), [(rho[k, m], -1.0)], math.log(eps) - math.log(Cl),
                  ydep=[(i, L_eps)], scale=(y[k, m] + eps))
            B.row(("sinr_d2d", k, m), [(rho[k, m], -1.0), (bv[k, m], -1.0)],
                  math.log(c.gamma_d2d_th) - Cs, ydep=[(i, Cs)])
            for d in range(D):
                terms = [(-1, ln_noise), (sig[m], math.log(G.g_c2d[k][m, d]))]
                terms += [(rho[kk, m], math.log(G.g_d2d_cross[k][kk, d]))
                          for kk in range(K) if kk != k]
                B.row(("beta_d2d", k, m, d), [(bv[k, m], 1.0)],
                      -math.log(G.g_d2d_self[k][m, d]), terms=terms, scale=1.0)
    for m in range(M):
        B.row(("sinr_cell", m), [(sig[m], -1.0), (cv[m], -1.0)], math.log(c.gamma_cell_th))
        terms = [(-1, ln_noise)] + [(rho[k, m], math.log(G.g_d2c[k, m])) for k in range(K)]
        B.row(("beta_cell", m), [(cv[m], 1.0)], -math.log(G.g_cell[m]), terms=terms)
        B.row(("pmax_cell", m), [(sig[m], 1.0)], -ln_pc, scale=c.p_max_cell)
    for k in range(K):
        B.row(("pmax_d2d", k), [], -ln_pd, terms=[(rho[k, m], 0.0) for m in range(M)],
              scale=c.p_max_d2d)

    w = np.zeros(B.n)
    w[r.ravel()] = 1.0
    w[sig] = 1.0 / LN2
    w[cv] = 1.0 / LN2
    return B.build(w, y=y.ravel())


def primal_assignment(instance: NetworkInstance, sol: PrimalSolution) -> Assignment:
    """Assignment read off a primal optimum; powers of idle pairs are dropped."""
    prog = sol.program
    y = prog.y.reshape(instance.K, instance.M).round().astype(np.int8)
    p = np.exp(sol.values("rho")) * y
    return Assignment(y, p, np.exp(sol.values("sig")))


def solve_primal(instance: NetworkInstance, y, config: SolverConfig,
                 consts: Optional[PrimalConstants] = None) -> PrimalSolution:
    prog = build_primal(instance, y, config, consts)
    return solve(prog, tol=config.duality_gap, mu=config.barrier_mu, max_newton=config.max_newton)


# ---------------------------------------------------------------------------
# feasibility (l1 slack) problem
# ---------------------------------------------------------------------------

@dataclass
class FeasibilitySolution:
    alpha_sum: float
    alpha: np.ndarray
    multipliers: np.ndarray
    point: np.ndarray
    program: ConvexProgram
    rows: np.ndarray
    box_term: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.alpha_sum <= 1e-6


def solve_feasibility(instance: NetworkInstance, y, config: SolverConfig,
                      consts: Optional[PrimalConstants] = None,
                      prog: Optional[ConvexProgram] = None) -> FeasibilitySolution:
    """Minimise the total violation ``sum alpha_q`` of the primal rows.

    Multipliers of the relaxed rows are returned normalised to sum to one.
    """
    if prog is None:
        prog = build_primal(instance, y, config, consts)
    rows = np.array([q for q, t in enumerate(prog.tags) if t[0] != BOX], dtype=int)
    nq = rows.size
    n = prog.n
    Q = prog.Q
    # columns for alpha; rows: g_q - alpha_q <= 0, then -alpha_q <= 0
    a_cols = sp.csr_matrix((-np.ones(nq), (rows, np.arange(nq))), shape=(Q, nq))
    top = sp.hstack([prog.A, a_cols])
    neg = sp.hstack([sp.csr_matrix((nq, n)), -sp.identity(nq)])
    A = sp.vstack([top, neg]).tocsr()
    b = np.r_[prog.b, np.zeros(nq)]
    x0 = _box_start(prog)
    g0, _ = _Oracle(prog).value(x0, prog.b)
    alpha0 = np.maximum(g0[rows], 0.0) + 1.0
    hi = alpha0.max() * 10 + 10.0
    aug = ConvexProgram(
        objective=np.r_[np.zeros(n), -np.ones(nq)], A=A, b_free=b,
        y_coef=sp.csr_matrix((Q + nq, 0)), y=np.zeros(0),
        term_row=prog.term_row, term_var=prog.term_var, term_off=prog.term_off,
        tags=list(prog.tags) + [("alpha_nonneg", int(q)) for q in rows],
        scale=np.ones(Q + nq), lower=np.r_[prog.lower, np.zeros(nq)],
        upper=np.r_[prog.upper, np.full(nq, hi)],
    )
    # upper bounds on alpha keep the centering problem bounded
    hi_rows = sp.hstack([sp.csr_matrix((nq, n)), sp.identity(nq)])
    aug = _replace(aug, A=sp.vstack([aug.A, hi_rows]).tocsr(),
                   b_free=np.r_[aug.b_free, -np.full(nq, hi)],
                   y_coef=sp.csr_matrix((aug.Q + nq, 0)),
                   tags=aug.tags + [("alpha_cap", int(q)) for q in rows],
                   scale=np.ones(aug.Q + nq))
    z0 = np.r_[x0, alpha0]
    res = _barrier(aug, aug.objective, z0, aug.b, t0=1.0, mu=config.barrier_mu,
                   gap=config.duality_gap, max_newton=config.max_newton)
    lam_all = 1.0 / (res.t * res.slack)
    lam = lam_all[rows]
    total = lam.sum()
    lam_bar = lam / total if total > 0 else np.full(nq, 1.0 / max(nq, 1))
    alpha = res.x[n:]
    box = np.array([q for q, t in enumerate(prog.tags) if t[0] == BOX], dtype=int)
    g_box = constraint_values(prog, res.x[:n])[box]
    box_term = float(lam_all[box] @ g_box / total) if total > 0 else 0.0
    return FeasibilitySolution(alpha_sum=float(alpha.sum()), alpha=alpha,
                               multipliers=lam_bar, point=res.x[:n], program=prog, rows=rows,
                               box_term=box_term)


# ---------------------------------------------------------------------------
# reduced program over the active pairs only
# ---------------------------------------------------------------------------

def build_power_program(instance: NetworkInstance, y) -> ConvexProgram:
    """Power allocation for a fixed pattern, with idle pairs removed outright.

    Channels without D2D reuse keep their CU at full power and are not
    variables; their rate enters as a constant.
    """
    c = instance.constants
    G = instance.gains
    K, M = instance.K, instance.M
    y = np.asarray(y).astype(bool)
    pairs = [tuple(p) for p in np.argwhere(y)]
    chans = sorted({m for _, m in pairs})
    sizes = instance.group_sizes
    ln_noise = math.log(c.noise_power)
    ln_pd, ln_pc = math.log(c.p_max_d2d), math.log(c.p_max_cell)

    B = ProgramBuilder()
    rho = B.var("rho", (len(pairs),), ln_pd - 60.0, ln_pd + 1.0)
    bv = B.var("b", (len(pairs),), -200.0, 200.0)
    sig = B.var("sig", (len(chans),), ln_pc - 60.0, ln_pc + 1.0)
    cv = B.var("c", (len(chans),), -200.0, 200.0)
    pi = {p: i for i, p in enumerate(pairs)}
    ci = {m: j for j, m in enumerate(chans)}
    w = np.zeros(B.n)
    for (k, m), i in pi.items():
        j = ci[m]
        B.row(("sinr_d2d", k, m), [(rho[i], -1.0), (bv[i], -1.0)], math.log(c.gamma_d2d_th))
        for d in range(sizes[k]):
            terms = [(-1, ln_noise), (sig[j], math.log(G.g_c2d[k][m, d]))]
            terms += [(rho[pi[(kk, m)]], math.log(G.g_d2d_cross[k][kk, d]))
                      for kk in range(K) if kk != k and (kk, m) in pi]
            B.row(("beta_d2d", k, m, d), [(bv[i], 1.0)], -math.log(G.g_d2d_self[k][m, d]), terms=terms)
        w[rho[i]] += sizes[k] / LN2
        w[bv[i]] += sizes[k] / LN2
    for m, j in ci.items():
        B.row(("sinr_cell", m), [(sig[j], -1.0), (cv[j], -1.0)], math.log(c.gamma_cell_th))
        terms = [(-1, ln_noise)] + [(rho[pi[(k, m)]], math.log(G.g_d2c[k, m]))
                                    for k in range(K) if (k, m) in pi]
        B.row(("beta_cell", m), [(cv[j], 1.0)], -math.log(G.g_cell[m]), terms=terms)
        B.row(("pmax_cell", m), [(sig[j], 1.0)], -ln_pc, scale=c.p_max_cell)
        w[sig[j]] += 1.0 / LN2
        w[cv[j]] += 1.0 / LN2
    for k in range(K):
        mine = [pi[(k, m)] for m in range(M) if (k, m) in pi]
        if mine:
            B.row(("pmax_d2d", k), [], -ln_pd, terms=[(rho[i], 0.0) for i in mine],
                  scale=c.p_max_d2d)
    prog = B.build(w)
    prog.index["pairs"] = pairs
    prog.index["chans"] = chans
    return prog


@dataclass
class PowerSolution:
    assignment: Assignment
    objective: float
    solution: PrimalSolution


def solve_powers(instance: NetworkInstance, y, config: SolverConfig) -> Optional[PowerSolution]:
    """Optimal powers for pattern ``y``; ``None`` when the pattern is infeasible."""
    y = np.asarray(y).astype(np.int8)
    prog = build_power_program(instance, y)
    idle = [m for m in range(instance.M) if m not in set(prog.index["chans"])]
    const = float(instance.cell_rate_max()[idle].sum())
    p_cell = np.full(instance.M, instance.constants.p_max_cell)
    p_d2d = np.zeros((instance.K, instance.M))
    if prog.n == 0:
        a = Assignment(y, p_d2d, p_cell)
        return PowerSolution(a, const, PrimalSolution(status="optimal", objective=0.0, program=prog))
    sol = solve(prog, tol=config.duality_gap, mu=config.barrier_mu, max_newton=config.max_newton)
    if not sol.optimal:
        return None
    rho = sol.values("rho")
    for i, (k, m) in enumerate(prog.index["pairs"]):
        p_d2d[k, m] = math.exp(rho[i])
    for j, m in enumerate(prog.index["chans"]):
        p_cell[m] = math.exp(sol.values("sig")[j])
    return PowerSolution(Assignment(y, p_d2d, p_cell), sol.objective + const, sol)


# ---------------------------------------------------------------------------
# single (group, CU) pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairResult:
    p_d2d: float
    p_cell: float
    R_d2d: float
    R_cell: float

    @property
    def R_sum(self) -> float:
        return self.R_d2d + self.R_cell


def pair_rates(instance: NetworkInstance, k: int, m: int, p_d2d: float, p_cell: float):
    """High-SINR rates of group ``k`` alone on channel ``m``."""
    c = instance.constants
    G = instance.gains
    beta_d = np.min(G.g_d2d_self[k][m] / (c.noise_power + p_cell * G.g_c2d[k][m]))
    beta_c = G.g_cell[m] / (c.noise_power + p_d2d * G.g_d2c[k, m])
    D = instance.groups[k].size
    return D * math.log2(p_d2d * beta_d), math.log2(p_cell * beta_c)


def solve_pair(instance: NetworkInstance, k: int, m: int,
               config: SolverConfig) -> Optional[PairResult]:
    """Best powers for group ``k`` reusing channel ``m`` with nobody else around.

    Returns ``None`` when the two SINR thresholds cannot both be met.
    """
    y = np.zeros((instance.K, instance.M), dtype=np.int8)
    y[k, m] = 1
    ps = solve_powers(instance, y, config)
    if ps is None:
        return None
    a = ps.assignment
    rd, rc = pair_rates(instance, k, m, a.p_d2d[k, m], a.p_cell[m])
    return PairResult(float(a.p_d2d[k, m]), float(a.p_cell[m]), rd, rc)


def pair_rate_bound(instance: NetworkInstance, k: int, m: int,
                    config: SolverConfig) -> Optional[float]:
    """Largest D2D rate group ``k`` can get on channel ``m`` with both SINR targets met.

    Extra co-channel groups only add interference and a shared power budget
    only lowers the per-channel cap, so this bounds the pair's rate in every
    pattern.  ``None`` when the pair is infeasible even alone.
    """
    y = np.zeros((instance.K, instance.M), dtype=np.int8)
    y[k, m] = 1
    prog = build_power_program(instance, y)
    w = np.zeros(prog.n)
    D = instance.groups[k].size
    w[prog.index["rho"][0]] = D / LN2
    w[prog.index["b"][0]] = D / LN2
    sol = solve(_replace(prog, objective=w), tol=config.duality_gap, mu=config.barrier_mu,
                max_newton=config.max_newton)
    return sol.objective if sol.optimal else None
