"""Scenario generation and the Monte-Carlo harness."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import convex, gbd, greedy, heuristic, matching
from .model import (Assignment, D2DGroup, NetworkInstance, RadioConstants, SolveReport,
                    SolverConfig, draw_fading, evaluate, fading_rng, gains_from_fading)

log = logging.getLogger(__name__)

PLACEMENTS = ("clustered-random", "regular")


@dataclass(frozen=True)
class ScenarioConfig:
    cell_radius: float = 1000.0
    cluster_radius: float = 50.0
    K: int = 4
    M: int = 10
    group_size: int = 3
    placement: str = "clustered-random"
    trials: int = 50
    rng_seed: int = 0
    radio: RadioConstants = field(default_factory=RadioConstants.from_db)
    c1: int = 4
    c2: int = 3

    def __post_init__(self):
        if not 0 < self.cluster_radius < self.cell_radius:
            raise ValueError("cluster radius must be positive and smaller than the cell radius")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.K < 0 or self.M < 1 or self.group_size < 1:
            raise ValueError("need K >= 0, M >= 1 and at least one receiver per group")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("C1 and C2 must be >= 1")


def _uniform_disk(rng, n, radius, center=(0.0, 0.0)):
    rad = radius * np.sqrt(rng.random(n))
    ang = 2.0 * math.pi * rng.random(n)
    return np.asarray(center) + np.c_[rad * np.cos(ang), rad * np.sin(ang)]


def regular_layout() -> dict:
    """Normalised cluster layout for the regular-placement scenario."""
    text = resources.files("d2dalloc").joinpath("data/regular_layout.json").read_text()
    return json.loads(text)


def _groups_clustered(config, rng):
    centers = _uniform_disk(rng, config.K, config.cell_radius - config.cluster_radius)
    groups = []
    for k in range(config.K):
        rx = _uniform_disk(rng, config.group_size, config.cluster_radius, centers[k])
        groups.append(D2DGroup(k, centers[k], rx))
    return groups


def _groups_regular(config):
    layout = regular_layout()
    clusters = layout["clusters"]
    if config.K > len(clusters):
        raise ValueError(f"regular layout has {len(clusters)} clusters, K={config.K} requested")
    groups = []
    R, r = config.cell_radius, config.cluster_radius
    for k in range(config.K):
        cl = clusters[k]
        ang = math.radians(cl["angle_deg"])
        center = np.array([math.cos(ang), math.sin(ang)]) * cl["radius"] * (R - r)
        offsets = np.asarray(cl["receivers"], dtype=float)[: config.group_size]
        if offsets.shape[0] < config.group_size:
            raise ValueError(f"regular layout defines {offsets.shape[0]} receivers per cluster")
        groups.append(D2DGroup(k, center, center + r * offsets))
    return groups


def generate(config: ScenarioConfig, seed: int) -> NetworkInstance:
    """Draw one instance; identical ``(config, seed)`` give identical instances.

    Positions and fading come from two independent streams spawned from
    ``seed``, so the gains can be regenerated from the positions alone.  CU
    positions are redrawn until every CU meets its own SINR threshold at full
    power without D2D reuse.
    """
    pos_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    c = config.radio
    if config.placement == "regular":
        groups = _groups_regular(config)
    else:
        groups = _groups_clustered(config, pos_rng)
    h = draw_fading(config.K, config.M, [g.size for g in groups], fading_rng(seed))
    for _ in range(10_000):
        cu = _uniform_disk(pos_rng, config.M, config.cell_radius)
        gains = gains_from_fading(cu, groups, c.pathloss_exponent, h)
        if (c.p_max_cell * gains.g_cell / c.noise_power >= c.gamma_cell_th).all():
            break
    else:
        raise RuntimeError("could not place CUs meeting their SINR threshold")
    return NetworkInstance(cu, tuple(groups), gains, c, config.cell_radius, seed)


# ---------------------------------------------------------------------------
# brute force
# ---------------------------------------------------------------------------

BRUTE_FORCE_LIMIT = 12


def brute_force(instance: NetworkInstance, config: SolverConfig) -> SolveReport:
    """Best pattern by solving the primal for every pattern within the caps."""
    K, M = instance.K, instance.M
    if K * M > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to K*M <= {BRUTE_FORCE_LIMIT}, got {K * M}")
    t0 = time.perf_counter()
    consts = convex.primal_constants(instance, config) if K else None
    best, best_sol = -math.inf, None
    patterns = gbd.cap_feasible_patterns(K, M, config.c1, config.c2)
    for yv in patterns:
        sol = convex.solve_primal(instance, yv.reshape(K, M), config, consts)
        if sol.optimal and sol.objective > best:
            best, best_sol = sol.objective, sol
    if best_sol is None or K == 0:
        assignment = Assignment.cellular_only(instance)
        best = float(instance.cell_rate_max().sum())
    else:
        assignment = convex.primal_assignment(instance, best_sol)
    rep = evaluate(instance, assignment, config)
    return SolveReport("brute", assignment, rep, best, time.perf_counter() - t0, True, 0.0,
                       None, {"patterns": len(patterns)})


# ---------------------------------------------------------------------------
# Monte-Carlo harness
# ---------------------------------------------------------------------------

ALGORITHMS = {
    "gbd": lambda inst, cfg: gbd.solve(inst, cfg),
    "matching": lambda inst, cfg: matching.solve(inst, cfg),
    "greedy": lambda inst, cfg: greedy.solve(inst, cfg),
    "heuristic": lambda inst, cfg: heuristic.solve(inst, cfg),
    "brute": lambda inst, cfg: brute_force(inst, cfg),
}


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    algorithm: str
    R_sum: float
    R_d2d_total: float
    R_cell_total: float
    R_cell_max: float
    success_rate: float
    fairness: float
    wall_time: float
    gap: float = math.nan
    R_sum_exact: float = math.nan
    proven_optimal: str = ""
    seed: int = 0
    sweep_param: str = ""
    sweep_value: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


RECORD_FIELDS = [f.name for f in fields(TrialRecord)]
METRICS = ("R_sum", "R_d2d_total", "R_cell_total", "R_cell_max", "success_rate",
           "fairness", "wall_time", "R_sum_exact")


def _nan(v):
    return math.nan if v is None else float(v)


def record_from_report(trial: int, seed: int, rep: SolveReport, rmax: float, **extra) -> TrialRecord:
    r = rep.report
    return TrialRecord(
        trial=trial, algorithm=rep.algorithm, R_sum=r.R_d2d_total + r.R_cell_total,
        R_d2d_total=r.R_d2d_total, R_cell_total=r.R_cell_total, R_cell_max=rmax,
        success_rate=_nan(r.success_rate), fairness=_nan(r.fairness), wall_time=rep.wall_time,
        gap=_nan(rep.gap) if rep.algorithm == "gbd" else math.nan,
        R_sum_exact=r.R_sum_exact,
        proven_optimal="" if rep.proven_optimal is None else str(bool(rep.proven_optimal)),
        seed=seed, **extra)


def solver_config_for(config: ScenarioConfig, solver: Optional[SolverConfig] = None) -> SolverConfig:
    base = solver or SolverConfig()
    return replace(base, c1=config.c1, c2=config.c2)


def run_trial(config: ScenarioConfig, trial: int, algorithms, solver: Optional[SolverConfig] = None,
              **extra) -> list:
    seed = config.rng_seed + trial
    inst = generate(config, seed)
    scfg = solver_config_for(config, solver)
    rmax = float(inst.cell_rate_max().sum())
    out = []
    for name in algorithms:
        try:
            rep = ALGORITHMS[name](inst, scfg)
            out.append(record_from_report(trial, seed, rep, rmax, **extra))
        except Exception as exc:  # recorded, never dropped
            log.warning("trial %d, %s failed: %s", trial, name, exc)
            nan = math.nan
            out.append(TrialRecord(trial, name, nan, nan, nan, rmax, nan, nan, nan,
                                   seed=seed, error=f"{type(exc).__name__}: {exc}", **extra))
    return out


def _run_trial_args(args):
    return run_trial(*args[:4], **args[4])


def run(config: ScenarioConfig, algorithms, solver: Optional[SolverConfig] = None,
        workers: int = 1, **extra) -> list:
    """Solve ``config.trials`` generated instances with every requested algorithm.

    Records are sorted by (trial, algorithm order) whatever the worker count.
    """
    algorithms = list(algorithms)
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"unknown algorithms {sorted(unknown)}")
    if "matching" in algorithms and (config.c1 != 1 or config.c2 != 1):
        raise ValueError("matching requires C1 = C2 = 1")
    jobs = [(config, t, algorithms, solver, extra) for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trial_args, jobs))
    else:
        chunks = [_run_trial_args(j) for j in jobs]
    order = {a: i for i, a in enumerate(algorithms)}
    recs = [r for c in chunks for r in c]
    return sorted(recs, key=lambda r: (r.trial, order[r.algorithm]))


SWEEP_PARAMS = {
    "gamma_db": lambda c, v: replace(c, radio=c.radio.with_gamma_db(float(v))),
    "cluster_radius": lambda c, v: replace(c, cluster_radius=float(v)),
    "cell_radius": lambda c, v: replace(c, cell_radius=float(v)),
    "M": lambda c, v: replace(c, M=int(v)),
    "K": lambda c, v: replace(c, K=int(v)),
    "c1": lambda c, v: replace(c, c1=int(v)),
    "c2": lambda c, v: replace(c, c2=int(v)),
    "group_size": lambda c, v: replace(c, group_size=int(v)),
    "trials": lambda c, v: replace(c, trials=int(v)),
}
SWEEP_ALIASES = {"r": "cluster_radius", "R": "cell_radius", "gamma": "gamma_db",
                 "gamma_th": "gamma_db", "C1": "c1", "C2": "c2"}


def with_param(config: ScenarioConfig, name: str, value) -> ScenarioConfig:
    name = SWEEP_ALIASES.get(name, name)
    if name not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {name!r}; choose from {sorted(SWEEP_PARAMS)}")
    return SWEEP_PARAMS[name](config, value)


def sweep(config: ScenarioConfig, param: str, values, algorithms,
          solver: Optional[SolverConfig] = None, workers: int = 1) -> list:
    """``run`` at every value of one parameter; trials reuse the same seeds."""
    name = SWEEP_ALIASES.get(param, param)
    out = []
    for v in values:
        out += run(with_param(config, name, v), algorithms, solver, workers,
                   sweep_param=name, sweep_value=str(v))
    return out


def aggregate(records, metrics=METRICS) -> list:
    """Mean and standard deviation per (sweep point, algorithm, metric), failed rows skipped."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.sweep_param, r.sweep_value, r.algorithm), []).append(r)
    out = []
    for (param, value, algo), rs in groups.items():
        for m in metrics:
            vals = np.array([getattr(r, m) for r in rs if r.ok], dtype=float)
            vals = vals[~np.isnan(vals)]
            out.append({"param": param, "value": value, "algorithm": algo, "metric": m,
                        "mean": float(vals.mean()) if vals.size else math.nan,
                        "std": float(vals.std(ddof=1)) if vals.size > 1 else math.nan,
                        "count": int(vals.size)})
    return out


def mean_of(records, algorithm: str, metric: str, **where) -> float:
    vals = [getattr(r, metric) for r in records
            if r.algorithm == algorithm and r.ok and all(getattr(r, k) == v for k, v in where.items())]
    vals = np.array(vals, dtype=float)
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else math.nan


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_records(path) -> list:
    types = {f.name: f.type for f in fields(TrialRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                if t in ("int", int):
                    kw[k] = int(v)
                elif t in ("float", float):
                    kw[k] = float(v) if v != "" else math.nan
                else:
                    kw[k] = v
            out.append(TrialRecord(**kw))
    return out


def write_aggregate(rows, path) -> None:
    cols = ["param", "value", "algorithm", "metric", "mean", "std", "count"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

RADIO_DB_KEYS = ("noise_dbm", "pathloss_exponent", "gamma_d2d_db", "gamma_cell_db",
                 "p_max_cell_dbm", "p_max_d2d_dbm")


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Scenario from a JSON-style mapping; radio settings are given in dB/dBm.

    ``gamma_db`` sets both SINR thresholds at once.
    """
    doc = dict(doc)
    radio_doc = dict(doc.pop("radio", {}))
    if "gamma_db" in radio_doc:
        g = radio_doc.pop("gamma_db")
        radio_doc.setdefault("gamma_d2d_db", g)
        radio_doc.setdefault("gamma_cell_db", g)
    bad = set(radio_doc) - set(RADIO_DB_KEYS)
    if bad:
        raise ValueError(f"unknown radio keys {sorted(bad)}")
    radio = RadioConstants.from_db(**radio_doc)
    known = {f.name for f in fields(ScenarioConfig)} - {"radio"}
    bad = set(doc) - known
    if bad:
        raise ValueError(f"unknown scenario keys {sorted(bad)}")
    return ScenarioConfig(radio=radio, **doc)


def load_config(path) -> ScenarioConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
