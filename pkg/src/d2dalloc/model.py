"""Domain types, interference math and evaluation metrics.

All powers are linear milliwatts, all gains linear. Conversions from dB and
dBm happen once, at construction of :class:`RadioConstants`.

Index conventions used throughout the package::

    m  in range(M)   cellular user (and the uplink channel it occupies)
    k  in range(K)   multicast D2D group
    d  in range(|D_k|) receiver inside group k
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# unit conversion
# ---------------------------------------------------------------------------

def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_mw(dbm):
    """``P[mW] = 10**(dBm/10)``."""
    return db_to_linear(dbm)


def mw_to_dbm(mw):
    return linear_to_db(mw)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class EvaluationError(ValueError):
    """Raised when a rate would need the log of a non-positive quantity."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadioConstants:
    """Linear radio constants shared by every link in a cell."""

    noise_power: float
    pathloss_exponent: float
    gamma_d2d_th: float
    gamma_cell_th: float
    p_max_cell: float
    p_max_d2d: float

    def __post_init__(self):
        for name in ("noise_power", "pathloss_exponent", "gamma_d2d_th",
                     "gamma_cell_th", "p_max_cell", "p_max_d2d"):
            v = float(getattr(self, name))
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_db(cls, noise_dbm: float = -114.0, pathloss_exponent: float = 3.0,
                gamma_d2d_db: float = 10.0, gamma_cell_db: float = 10.0,
                p_max_cell_dbm: float = 20.0, p_max_d2d_dbm: float = 20.0):
        """Build from logarithmic units; defaults are the standard simulation settings."""
        return cls(
            noise_power=float(dbm_to_mw(noise_dbm)),
            pathloss_exponent=pathloss_exponent,
            gamma_d2d_th=float(db_to_linear(gamma_d2d_db)),
            gamma_cell_th=float(db_to_linear(gamma_cell_db)),
            p_max_cell=float(dbm_to_mw(p_max_cell_dbm)),
            p_max_d2d=float(dbm_to_mw(p_max_d2d_dbm)),
        )

    def with_gamma_db(self, gamma_db: float) -> "RadioConstants":
        g = float(db_to_linear(gamma_db))
        return replace(self, gamma_d2d_th=g, gamma_cell_th=g)


@dataclass(frozen=True)
class D2DGroup:
    id: int
    transmitter_pos: np.ndarray
    receiver_positions: np.ndarray

    def __post_init__(self):
        tx = _frozen(self.transmitter_pos).reshape(2)
        rx = _frozen(self.receiver_positions).reshape(-1, 2)
        if rx.shape[0] < 1:
            raise ValueError("a D2D group needs at least one receiver")
        rx.setflags(write=False)
        object.__setattr__(self, "transmitter_pos", tx)
        object.__setattr__(self, "receiver_positions", rx)

    @property
    def size(self) -> int:
        return int(self.receiver_positions.shape[0])


@dataclass(frozen=True)
class GainTable:
    """Linear link gains.

    ``g_d2d_self[k]`` and ``g_c2d[k]`` have shape ``(M, |D_k|)``;
    ``g_d2d_cross[k]`` has shape ``(K, |D_k|)`` where row ``k'`` is the gain
    from the transmitter of group ``k'`` to the receivers of group ``k``.
    The self row ``k' == k`` is unused and stored as zero.
    """

    g_cell: np.ndarray
    g_d2c: np.ndarray
    g_d2d_self: tuple
    g_c2d: tuple
    g_d2d_cross: tuple

    def __post_init__(self):
        object.__setattr__(self, "g_cell", _frozen(self.g_cell).reshape(-1))
        M = self.g_cell.shape[0]
        K = len(self.g_d2d_self)
        d2c = _frozen(self.g_d2c).reshape(K, M)
        object.__setattr__(self, "g_d2c", d2c)
        object.__setattr__(self, "g_d2d_self",
                           tuple(_frozen(a).reshape(M, -1) for a in self.g_d2d_self))
        object.__setattr__(self, "g_c2d",
                           tuple(_frozen(a).reshape(M, -1) for a in self.g_c2d))
        object.__setattr__(self, "g_d2d_cross",
                           tuple(_frozen(a).reshape(K, -1) for a in self.g_d2d_cross))
        if len(self.g_c2d) != K or len(self.g_d2d_cross) != K:
            raise ValueError("per-group gain lists must all have K entries")
        for k in range(K):
            D = self.g_d2d_self[k].shape[1]
            if self.g_c2d[k].shape != (M, D) or self.g_d2d_cross[k].shape != (K, D):
                raise ValueError(f"gain shapes of group {k} are inconsistent")
            off = np.delete(self.g_d2d_cross[k], k, axis=0)
            if (self.g_d2d_self[k] <= 0).any() or (self.g_c2d[k] <= 0).any() or (off <= 0).any():
                raise ValueError(f"gains of group {k} must be > 0")
        if (self.g_cell <= 0).any() or (self.g_d2c <= 0).any():
            raise ValueError("cellular gains must be > 0")

    @property
    def M(self) -> int:
        return int(self.g_cell.shape[0])

    @property
    def K(self) -> int:
        return len(self.g_d2d_self)


@dataclass(frozen=True)
class NetworkInstance:
    cu_positions: np.ndarray
    groups: tuple
    gains: GainTable
    constants: RadioConstants
    cell_radius: float = 1000.0
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "cu_positions", _frozen(self.cu_positions).reshape(-1, 2))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.M < 1:
            raise ValueError("an instance needs at least one CU")
        if self.gains.M != self.M or self.gains.K != self.K:
            raise ValueError(
                f"gain table is {self.gains.K}x{self.gains.M}, instance is {self.K}x{self.M}")
        for k, g in enumerate(self.groups):
            if self.gains.g_d2d_self[k].shape[1] != g.size:
                raise ValueError(f"group {k}: gain table receiver count mismatch")

    @property
    def M(self) -> int:
        return int(self.cu_positions.shape[0])

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=int)

    def with_constants(self, constants: RadioConstants) -> "NetworkInstance":
        return replace(self, constants=constants)

    def cell_rate_max(self) -> np.ndarray:
        """Per-CU rate without D2D reuse and at full power."""
        c = self.constants
        return np.log2(c.p_max_cell * self.gains.g_cell / c.noise_power)

    # -- serialization -------------------------------------------------------

    def to_dict(self, include_gains: bool = True) -> dict:
        c = self.constants
        doc = {
            "cell_radius": self.cell_radius,
            "seed": self.seed,
            "constants": {
                "noise_power": c.noise_power,
                "pathloss_exponent": c.pathloss_exponent,
                "gamma_d2d_th": c.gamma_d2d_th,
                "gamma_cell_th": c.gamma_cell_th,
                "p_max_cell": c.p_max_cell,
                "p_max_d2d": c.p_max_d2d,
            },
            "cu_positions": self.cu_positions.tolist(),
            "groups": [
                {"transmitter_pos": g.transmitter_pos.tolist(),
                 "receiver_positions": g.receiver_positions.tolist()}
                for g in self.groups
            ],
        }
        if include_gains:
            G = self.gains
            doc["gains"] = {
                "g_cell": G.g_cell.tolist(),
                "g_d2c": G.g_d2c.tolist(),
                "g_d2d_self": [a.tolist() for a in G.g_d2d_self],
                "g_c2d": [a.tolist() for a in G.g_c2d],
                "g_d2d_cross": [a.tolist() for a in G.g_d2d_cross],
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkInstance":
        constants = RadioConstants(**doc["constants"])
        groups = tuple(
            D2DGroup(k, g["transmitter_pos"], g["receiver_positions"])
            for k, g in enumerate(doc["groups"])
        )
        cu = np.asarray(doc["cu_positions"], dtype=float).reshape(-1, 2)
        seed = doc.get("seed")
        if doc.get("gains") is not None:
            G = doc["gains"]
            M = cu.shape[0]
            gains = GainTable(
                g_cell=G["g_cell"],
                g_d2c=np.asarray(G["g_d2c"], dtype=float).reshape(len(groups), M),
                g_d2d_self=tuple(G["g_d2d_self"]),
                g_c2d=tuple(G["g_c2d"]),
                g_d2d_cross=tuple(G["g_d2d_cross"]),
            )
        else:
            if seed is None:
                raise ValueError("instance document has neither gains nor a seed")
            gains = gains_from_positions(cu, groups, constants.pathloss_exponent,
                                         fading_rng(seed))
        return cls(cu, groups, gains, constants,
                   float(doc.get("cell_radius", 1000.0)), seed)

    def save(self, path, include_gains: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_gains), indent=1))

    @classmethod
    def load(cls, path) -> "NetworkInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Assignment:
    """Channel reuse pattern ``y`` with the powers it is operated at."""

    y: np.ndarray
    p_d2d: np.ndarray
    p_cell: np.ndarray

    def __post_init__(self):
        y = np.array(self.y)
        if y.ndim != 2:
            raise ValueError("y must be a K x M matrix")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be binary")
        y = y.astype(np.int8)
        y.setflags(write=False)
        p = _frozen(self.p_d2d).reshape(y.shape)
        pc = _frozen(self.p_cell).reshape(y.shape[1])
        if (p < 0).any():
            raise ValueError("D2D powers must be non-negative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p_d2d", p)
        object.__setattr__(self, "p_cell", pc)

    @classmethod
    def cellular_only(cls, instance: NetworkInstance) -> "Assignment":
        K, M = instance.K, instance.M
        return cls(np.zeros((K, M), dtype=np.int8), np.zeros((K, M)),
                   np.full(M, instance.constants.p_max_cell))

    @property
    def pairs(self) -> list:
        return [tuple(int(i) for i in kv) for kv in np.argwhere(self.y == 1)]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by every allocation algorithm.

    ``big_c=None`` scales the big constant to the instance (100 times the
    largest interference-free single-link rate).  ``time_limit`` (seconds)
    optionally stops the exact search early with its incumbent.
    """

    c1: int = 1
    c2: int = 1
    epsilon: float = 1e-6
    big_c: Optional[float] = None
    gap_tol: float = 1e-4
    max_iter: int = 200
    barrier_mu: float = 10.0
    duality_gap: float = 1e-8
    max_newton: int = 500
    kkt_tol: float = 1e-6
    seed: int = 0
    time_limit: Optional[float] = None

    def __post_init__(self):
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("C1 and C2 must be >= 1")


@dataclass(frozen=True)
class EvaluationReport:
    beta_d2d: np.ndarray
    beta_cell: np.ndarray
    r_d2d: np.ndarray
    R_d2d: np.ndarray
    R_cell: np.ndarray
    R_sum: float
    R_cell_max: float
    admitted: frozenset
    success_rate: Optional[float]
    fairness: Optional[float]
    # log2(1 + SINR) counterparts of the rate fields
    r_d2d_exact: np.ndarray = field(default=None)
    R_d2d_exact: np.ndarray = field(default=None)
    R_cell_exact: np.ndarray = field(default=None)
    R_sum_exact: float = float("nan")

    @property
    def R_d2d_total(self) -> float:
        return float(self.R_d2d.sum())

    @property
    def R_cell_total(self) -> float:
        return float(self.R_cell.sum())


@dataclass
class SolveReport:
    """Result of one allocation algorithm on one instance."""

    algorithm: str
    assignment: Assignment
    report: EvaluationReport
    objective: float
    wall_time: float = 0.0
    proven_optimal: Optional[bool] = None
    gap: Optional[float] = None
    state: object = None
    info: dict = field(default_factory=dict)

    @property
    def R_sum(self) -> float:
        return self.report.R_sum


# ---------------------------------------------------------------------------
# radio math
# ---------------------------------------------------------------------------

def link_gain(distance, fading=1.0, alpha: float = 3.0):
    """Distance power law with a multiplicative fading term, ``h * d**-alpha``.

    Distances are in meters relative to a 1 m reference.
    """
    d = np.asarray(distance, dtype=float)
    h = np.asarray(fading, dtype=float)
    if (d <= 0).any():
        raise ValueError("link distance must be > 0")
    if (h <= 0).any():
        raise ValueError("fading gain must be > 0")
    g = h * d ** (-float(alpha))
    return float(g) if g.ndim == 0 else g


def beta_d2d_receivers(instance: NetworkInstance, assignment: Assignment,
                       k: int, m: int) -> np.ndarray:
    """Per-receiver SINR-per-unit-power of group ``k`` on channel ``m``."""
    G = instance.gains
    c = instance.constants
    interf = c.noise_power + assignment.p_cell[m] * G.g_c2d[k][m]
    y = assignment.y
    for kk in range(instance.K):
        if kk != k and y[kk, m]:
            interf = interf + assignment.p_d2d[kk, m] * G.g_d2d_cross[k][kk]
    return G.g_d2d_self[k][m] / interf


def beta_d2d(instance: NetworkInstance, assignment: Assignment, k: int, m: int) -> float:
    """Worst-receiver channel quality; co-channel groups interfere only if active."""
    return float(beta_d2d_receivers(instance, assignment, k, m).min())


def beta_cell(instance: NetworkInstance, assignment: Assignment, m: int) -> float:
    G = instance.gains
    interf = instance.constants.noise_power + float(
        np.sum(assignment.y[:, m] * assignment.p_d2d[:, m] * G.g_d2c[:, m]))
    return float(G.g_cell[m] / interf)


def fairness_index(rates: Sequence[float]) -> Optional[float]:
    """Jain index of the admitted groups' rates; ``None`` when nobody is admitted."""
    r = np.asarray(list(rates), dtype=float)
    if r.size == 0:
        return None
    denom = r.size * float(np.sum(r * r))
    if denom == 0.0:
        return None
    return float(np.sum(r)) ** 2 / denom


def success_rate(assignment: Assignment, K: Optional[int] = None) -> Optional[float]:
    K = assignment.y.shape[0] if K is None else K
    if K == 0:
        return None
    admitted = int(np.count_nonzero(assignment.y.sum(axis=1) >= 1))
    return admitted / K


def evaluate(instance: NetworkInstance, assignment: Assignment,
             config: Optional[SolverConfig] = None) -> EvaluationReport:
    """Rates and metrics of ``assignment``.

    Rates use the high-SINR form ``log2(P * beta)``; the ``*_exact`` fields
    carry ``log2(1 + P * beta)`` for comparison.
    """
    K, M = instance.K, instance.M
    if assignment.y.shape != (K, M):
        raise ValueError(f"assignment is {assignment.y.shape}, instance is {(K, M)}")
    sizes = instance.group_sizes
    bd = np.zeros((K, M))
    for k in range(K):
        for m in range(M):
            bd[k, m] = beta_d2d(instance, assignment, k, m)
    bc = np.array([beta_cell(instance, assignment, m) for m in range(M)])

    r = np.zeros(K)
    r_exact = np.zeros(K)
    for k, m in assignment.pairs:
        sinr = assignment.p_d2d[k, m] * bd[k, m]
        if not sinr > 0.0:
            raise EvaluationError(f"non-positive D2D SINR on active link (k={k}, m={m})")
        r[k] += math.log2(sinr)
        r_exact[k] += math.log1p(sinr) / LN2
    sinr_cell = assignment.p_cell * bc
    if not (sinr_cell > 0).all():
        m = int(np.argmin(sinr_cell))
        raise EvaluationError(f"non-positive cellular SINR on channel m={m}")
    R_cell = np.log2(sinr_cell)
    R_cell_exact = np.log1p(sinr_cell) / LN2
    R_d2d = sizes * r
    R_d2d_exact = sizes * r_exact

    admitted = frozenset(int(k) for k in np.flatnonzero(assignment.y.sum(axis=1) >= 1))
    return EvaluationReport(
        beta_d2d=_frozen(bd), beta_cell=_frozen(bc),
        r_d2d=_frozen(r), R_d2d=_frozen(R_d2d), R_cell=_frozen(R_cell),
        R_sum=float(R_d2d.sum() + R_cell.sum()),
        R_cell_max=float(instance.cell_rate_max().sum()),
        admitted=admitted,
        success_rate=success_rate(assignment, K),
        fairness=fairness_index([R_d2d[k] for k in sorted(admitted)]),
        r_d2d_exact=_frozen(r_exact), R_d2d_exact=_frozen(R_d2d_exact),
        R_cell_exact=_frozen(R_cell_exact),
        R_sum_exact=float(R_d2d_exact.sum() + R_cell_exact.sum()),
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple
    amount: float

    def __str__(self):
        return f"{self.kind}{self.index}: {self.amount:.3g}"


def validate(instance: NetworkInstance, assignment: Assignment,
             config: SolverConfig, rtol: float = 1e-7) -> list:
    """Every constraint violated by ``assignment``; an empty list means feasible."""
    c = instance.constants
    y = assignment.y
    out = []
    for k, s in enumerate(y.sum(axis=1)):
        if s > config.c1:
            out.append(Violation("C1", (k,), float(s - config.c1)))
    for m, s in enumerate(y.sum(axis=0)):
        if s > config.c2:
            out.append(Violation("C2", (m,), float(s - config.c2)))
    for k, m in assignment.pairs:
        sinr = assignment.p_d2d[k, m] * beta_d2d(instance, assignment, k, m)
        if sinr < c.gamma_d2d_th * (1 - rtol):
            out.append(Violation("sinr_d2d", (k, m), c.gamma_d2d_th - sinr))
    for m in range(instance.M):
        pc = assignment.p_cell[m]
        if not pc > 0:
            out.append(Violation("p_cell_positive", (m,), float(-pc)))
            continue
        if pc > c.p_max_cell * (1 + rtol):
            out.append(Violation("p_max_cell", (m,), pc - c.p_max_cell))
        sinr = pc * beta_cell(instance, assignment, m)
        if sinr < c.gamma_cell_th * (1 - rtol):
            out.append(Violation("sinr_cell", (m,), c.gamma_cell_th - sinr))
    used = (assignment.p_d2d * y).sum(axis=1)
    for k, p in enumerate(used):
        if p > c.p_max_d2d * (1 + rtol):
            out.append(Violation("p_max_d2d", (k,), p - c.p_max_d2d))
    return out


# ---------------------------------------------------------------------------
# gains from geometry
# ---------------------------------------------------------------------------

MIN_DISTANCE = 1.0


def fading_rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])


def draw_fading(K: int, M: int, sizes: Sequence[int], rng: np.random.Generator) -> dict:
    """Exponential(1) power fading for every (link, channel), in a fixed order."""
    return {
        "cell": rng.exponential(1.0, M),
        "d2c": rng.exponential(1.0, (K, M)),
        "self": [rng.exponential(1.0, (M, D)) for D in sizes],
        "c2d": [rng.exponential(1.0, (M, D)) for D in sizes],
        "cross": [rng.exponential(1.0, (K, D)) for D in sizes],
    }


def _dist(a, b):
    return np.maximum(np.linalg.norm(np.asarray(a)[..., None, :] - np.asarray(b)[None, ...], axis=-1),
                      MIN_DISTANCE)


def gains_from_fading(cu_positions, groups, alpha: float, h: dict) -> GainTable:
    cu = np.asarray(cu_positions, dtype=float).reshape(-1, 2)
    M, K = cu.shape[0], len(groups)
    bs = np.zeros((1, 2))
    d_cell = _dist(cu, bs)[:, 0]
    tx = np.array([g.transmitter_pos for g in groups]).reshape(K, 2)
    d_d2c = _dist(tx, bs)[:, 0] if K else np.zeros(0)
    g_self, g_c2d, g_cross = [], [], []
    for k, g in enumerate(groups):
        rx = g.receiver_positions
        d_self = _dist(g.transmitter_pos[None, :], rx)[0]            # (D,)
        g_self.append(link_gain(np.broadcast_to(d_self, (M, g.size)), h["self"][k], alpha))
        g_c2d.append(link_gain(_dist(cu, rx), h["c2d"][k], alpha))    # (M, D)
        cross = link_gain(_dist(tx, rx), h["cross"][k], alpha).reshape(K, g.size)
        cross = np.array(cross)
        cross[k] = 0.0
        g_cross.append(cross)
    g_d2c = link_gain(np.broadcast_to(d_d2c[:, None], (K, M)), h["d2c"], alpha) if K else np.zeros((0, M))
    return GainTable(
        g_cell=link_gain(d_cell, h["cell"], alpha),
        g_d2c=np.asarray(g_d2c).reshape(K, M),
        g_d2d_self=tuple(g_self), g_c2d=tuple(g_c2d), g_d2d_cross=tuple(g_cross),
    )


def gains_from_positions(cu_positions, groups, alpha: float,
                         rng: np.random.Generator) -> GainTable:
    cu = np.asarray(cu_positions, dtype=float).reshape(-1, 2)
    h = draw_fading(len(groups), cu.shape[0], [g.size for g in groups], rng)
    return gains_from_fading(cu, groups, alpha, h)
