"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The Monte-Carlo criteria share one set of runs (50 trials per sweep point,
common seeds across points).  GBD on the full-size scenario is capped at
``D2DALLOC_GBD_TIME_LIMIT`` seconds per instance (10 by default) so the
suite finishes on one core; the cap is reported in every affected line.
Setting ``D2DALLOC_ACCEPTANCE_CACHE`` to a file path stores the Monte-Carlo
runs there and reuses them on the next invocation.
"""
import math
import os
import pickle
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from d2dalloc import convex, gbd, greedy, heuristic, matching
from d2dalloc.bench import (ScenarioConfig, TrialRecord, brute_force, generate, record_from_report,
                            with_param)
from d2dalloc.gbd import cap_feasible_patterns
from d2dalloc.model import SolverConfig

from oracles import grid_pair_oracle

TRIALS = 50
GBD_TIME_LIMIT = float(os.environ.get("D2DALLOC_GBD_TIME_LIMIT", "10"))
MAX_ITER = 200
ALGOS = ("gbd", "greedy", "heuristic")
DEFAULT = ScenarioConfig(trials=TRIALS)          # M=10, K=4, C1=4, C2=3
SWEEPS = {
    "gamma_db": (5.0, 10.0, 15.0, 20.0),
    "cluster_radius": (25.0, 50.0, 75.0, 100.0),
    "cell_radius": (500.0, 1000.0, 1500.0),
}

RESULTS: list = []


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    RESULTS.append(line)
    return ok


@dataclass
class GbdRun:
    """What criterion 7 needs from every GBD solve in the suite."""
    label: str
    monotone: bool
    iterations: int
    termination: str
    proven: bool


GBD_RUNS: list = []


def gbd_run(label, rep):
    st = rep.state
    return GbdRun(label, st.bounds_monotone(1e-9), st.iteration, st.termination,
                  bool(rep.proven_optimal))


def note_gbd(label, rep):
    GBD_RUNS.append(gbd_run(label, rep))


# ---------------------------------------------------------------------------
# shared Monte-Carlo runs
# ---------------------------------------------------------------------------

@dataclass
class MonteCarlo:
    records: dict = field(default_factory=dict)     # (param, value) -> list[TrialRecord]
    gbd_runs: list = field(default_factory=list)
    seconds: float = 0.0


def _point_config(param, value):
    return with_param(DEFAULT, param, value)


def _run_point(cfg, label, mc):
    solver = SolverConfig(c1=cfg.c1, c2=cfg.c2, max_iter=MAX_ITER, time_limit=GBD_TIME_LIMIT)
    out = []
    for trial in range(cfg.trials):
        seed = cfg.rng_seed + trial
        inst = generate(cfg, seed)
        rmax = float(inst.cell_rate_max().sum())
        for name in ALGOS:
            try:
                if name == "gbd":
                    rep = gbd.solve(inst, solver)
                    mc.gbd_runs.append(gbd_run(f"{label} trial {trial}", rep))
                else:
                    rep = {"greedy": greedy, "heuristic": heuristic}[name].solve(inst, solver)
            except Exception as exc:  # kept as a failed row, never dropped
                msg = f"{type(exc).__name__}: {exc}"
                if name == "gbd":
                    mc.gbd_runs.append(GbdRun(f"{label} trial {trial}", True, 0, "error: " + msg, False))
                nan = math.nan
                out.append(TrialRecord(trial, name, nan, nan, nan, rmax, nan, nan, nan,
                                       seed=seed, error=msg))
                continue
            out.append(record_from_report(trial, seed, rep, rmax))
    return out


def _compute_monte_carlo():
    mc = MonteCarlo()
    t0 = time.perf_counter()
    done = {}
    for param, values in SWEEPS.items():
        for v in values:
            cfg = _point_config(param, v)
            if cfg == DEFAULT and "default" in done:
                mc.records[(param, v)] = done["default"]
                continue
            label = "default" if cfg == DEFAULT else f"{param}={v:g}"
            recs = _run_point(cfg, label, mc)
            mc.records[(param, v)] = recs
            if cfg == DEFAULT:
                done["default"] = recs
    mc.seconds = time.perf_counter() - t0
    return mc


@pytest.fixture(scope="module")
def mc():
    path = os.environ.get("D2DALLOC_ACCEPTANCE_CACHE")
    key = (TRIALS, GBD_TIME_LIMIT, MAX_ITER, SWEEPS)
    if path and os.path.exists(path):
        with open(path, "rb") as fh:
            cached_key, data = pickle.load(fh)
        if cached_key == key:
            return data
    data = _compute_monte_carlo()
    if path:
        with open(path, "wb") as fh:
            pickle.dump((key, data), fh)
    return data


def by_algo(records, algo):
    return [r for r in records if r.algorithm == algo]


def failed(records):
    return [(r.algorithm, r.trial) for r in records if not r.ok]


def mean(records, algo, metric):
    vals = np.array([getattr(r, metric) for r in by_algo(records, algo)], dtype=float)
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else math.nan


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_gbd_matches_brute_force():
    t0 = time.perf_counter()
    worst = 0.0
    bad = []
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        K, M = int(rng.choice([1, 2])), int(rng.choice([2, 3]))
        c1, c2 = int(rng.choice([1, 2])), int(rng.choice([1, 2]))
        inst = generate(ScenarioConfig(K=K, M=M, trials=1), 1000 + i)
        cfg = SolverConfig(c1=c1, c2=c2, max_iter=MAX_ITER)
        rep = gbd.solve(inst, cfg)
        note_gbd(f"oracle instance {i}", rep)
        ref = brute_force(inst, cfg)
        rel = abs(rep.R_sum - ref.R_sum) / abs(ref.R_sum)
        worst = max(worst, rel)
        if rel > 1e-3:
            bad.append((i, rep.R_sum, ref.R_sum))
    secs = time.perf_counter() - t0
    ok = report(1, not bad and secs <= 600,
                f"20 instances, worst relative gap {worst:.2e} (tol 1e-3), {secs:.1f} s (limit 600 s)"
                + (f", mismatches {bad}" if bad else ""))
    assert ok


def test_criterion_2_matching_equals_gbd():
    worst = 0.0
    bad = []
    for i in range(20):
        inst = generate(ScenarioConfig(K=3, M=4, trials=1), 2000 + i)
        cfg = SolverConfig(c1=1, c2=1, max_iter=MAX_ITER)
        rm = matching.solve(inst, cfg)
        rg = gbd.solve(inst, cfg)
        note_gbd(f"matching instance {i}", rg)
        rel = abs(rm.R_sum - rg.R_sum) / abs(rg.R_sum)
        worst = max(worst, rel)
        if rel > 1e-3:
            bad.append((i, rm.R_sum, rg.R_sum, rg.state.termination))
    ok = report(2, not bad, f"20 instances K=3 M=4, worst relative gap {worst:.2e} (tol 1e-3)"
                + (f", mismatches {bad}" if bad else ""))
    assert ok


def test_criterion_3_algorithm_ordering(mc):
    recs = mc.records[("gamma_db", 10.0)]
    errors = [(r.algorithm, r.trial) for r in recs if not r.ok]
    g = {r.trial: r.R_sum for r in by_algo(recs, "gbd")}
    gr = {r.trial: r.R_sum for r in by_algo(recs, "greedy")}
    he = {r.trial: r.R_sum for r in by_algo(recs, "heuristic")}
    over_greedy = [t for t in g if gr[t] > g[t] + 1e-3]
    over_heur = [t for t in g if he[t] > g[t] + 1e-3]
    m_gr, m_he, m_g = np.mean(list(gr.values())), np.mean(list(he.values())), np.mean(list(g.values()))
    proven = sum(r.proven_optimal == "True" for r in by_algo(recs, "gbd"))
    ok = not over_greedy and not over_heur and m_gr >= m_he and not errors
    report(3, ok, (f"solver errors {errors}; " if errors else "") + f"{len(g)} instances; greedy > gbd+1e-3 on {len(over_greedy)}, heuristic > gbd+1e-3 "
                  f"on {len(over_heur)}; means gbd {m_g:.2f} greedy {m_gr:.2f} heuristic {m_he:.2f}; "
                  f"gbd proven optimal on {proven} (time limit {GBD_TIME_LIMIT:g} s)")
    assert ok


def test_criterion_4_d2d_gain_band(mc):
    recs = by_algo(mc.records[("gamma_db", 10.0)], "gbd")
    errors = failed(recs)
    above = np.mean([r.ok and r.R_sum > r.R_cell_max for r in recs])
    good = [r for r in recs if r.ok]
    gain = np.mean([r.R_sum for r in good]) / np.mean([r.R_cell_max for r in good]) - 1.0
    ok = above >= 0.9 and 0.10 <= gain <= 2.00 and not errors
    report(4, ok, (f"solver errors {errors}; " if errors else "") + f"R_sum > R_cell_max in {above:.0%} of {len(recs)} trials (need 90%); "
                  f"relative gain {gain:.1%} (band 10%..200%)")
    assert ok


def _monotone(vals, direction):
    pairs = list(zip(vals, vals[1:]))
    if direction == "down":
        return all(b <= a for a, b in pairs)
    return all(b >= a for a, b in pairs)


def test_criterion_5_trends(mc):
    checks = [("gamma_db", "R_sum", "down"), ("gamma_db", "success_rate", "down"),
              ("cluster_radius", "R_d2d_total", "down"), ("cell_radius", "R_sum", "up")]
    failures, lines = [], []
    for param, metric, direction in checks:
        for algo in ALGOS:
            vals = [mean(mc.records[(param, v)], algo, metric) for v in SWEEPS[param]]
            lines.append(f"{algo} {metric} vs {param}: " + " ".join(f"{v:.3f}" for v in vals))
            if not _monotone(vals, direction):
                failures.append(f"{algo} {metric} not {'non-increasing' if direction == 'down' else 'non-decreasing'} in {param}")
    for key, recs in mc.records.items():
        if failed(recs):
            failures.append(f"solver errors at {key}: {failed(recs)}")
    for line in lines:
        print("  " + line)
    ok = report(5, not failures, "all trends hold" if not failures else "; ".join(failures))
    assert ok


def test_criterion_6_fairness(mc):
    recs = mc.records[("gamma_db", 10.0)]
    vals = {a: mean(recs, a, "fairness") for a in ALGOS}
    errors = failed(recs)
    ok = all(v > 0.9 for v in vals.values()) and not errors
    report(6, ok, (f"solver errors {errors}; " if errors else "") + "mean fairness " + ", ".join(f"{a} {v:.3f}" for a, v in vals.items()) + " (need > 0.9)")
    assert ok


def test_criterion_8_convex_solver():
    # KKT residuals at every optimum of every pattern on small instances
    worst = 0.0
    n_opt = 0
    for i in range(5):
        inst = generate(ScenarioConfig(K=2, M=2, trials=1), 3000 + i)
        cfg = SolverConfig(c1=2, c2=2)
        consts = convex.primal_constants(inst, cfg)
        for yv in cap_feasible_patterns(2, 2, 2, 2):
            y = yv.reshape(2, 2)
            for sol in (convex.solve_primal(inst, y, cfg, consts),
                        getattr(convex.solve_powers(inst, y, cfg), "solution", None)):
                if sol is not None and sol.optimal and sol.kkt:
                    n_opt += 1
                    worst = max(worst, max(sol.kkt.values()))
    kkt_ok = worst <= 1e-6

    # single-pair optimum against the refined grid search
    grid_err = 0.0
    grid_bad = []
    for i in range(10):
        inst = generate(ScenarioConfig(K=1, M=1, trials=1), 4000 + i)
        res = convex.solve_pair(inst, 0, 0, SolverConfig())
        ref = grid_pair_oracle(inst, 0, 0)
        if (res is None) != (ref is None):
            grid_bad.append(i)
            continue
        if res is not None:
            err = abs(res.R_sum - ref)
            grid_err = max(grid_err, err)
            if err > 1e-3:
                grid_bad.append(i)

    # multipliers against finite-difference sensitivities
    rng = np.random.default_rng(5000)
    sens_err = 0.0
    checked = 0
    seed = 5000
    while checked < 10:
        seed += 1
        inst = generate(ScenarioConfig(K=2, M=2, trials=1), seed)
        cfg = SolverConfig(c1=2, c2=2)
        y = np.array([[1, 0], [0, 1]])
        prog = convex.build_primal(inst, y, cfg)
        sol = convex.solve(prog)
        if not sol.optimal:
            continue
        active = np.flatnonzero(sol.multipliers > 1e-3)
        q = int(rng.choice(active))
        d = 1e-4
        up = convex.solve(prog.with_b_shift(q, d)).objective
        dn = convex.solve(prog.with_b_shift(q, -d)).objective
        fd = (up - dn) / (2 * d)
        sens_err = max(sens_err, abs(fd - sol.multipliers[q]) / abs(sol.multipliers[q]))
        checked += 1
    ok = kkt_ok and not grid_bad and sens_err <= 0.05
    report(8, ok, f"max KKT residual {worst:.2e} over {n_opt} optima (tol 1e-6); "
                  f"grid-search max error {grid_err:.2e} (tol 1e-3){f', bad {grid_bad}' if grid_bad else ''}; "
                  f"sensitivity max relative error {sens_err:.2%} on {checked} constraints (tol 5%)")
    assert ok


def test_criterion_9_c1_saturation():
    c1_values = (1, 2, 3, 4)
    sums = {c: [] for c in c1_values}
    for i in range(20):
        inst = generate(ScenarioConfig(K=2, M=4, trials=1), 6000 + i)
        for c1 in c1_values:
            rep = gbd.solve(inst, SolverConfig(c1=c1, c2=1, max_iter=MAX_ITER))
            note_gbd(f"saturation instance {i} C1={c1}", rep)
            sums[c1].append(rep.R_sum)
    means = [float(np.mean(sums[c])) for c in c1_values]
    inc = np.diff(means)
    ok = bool((inc >= 0).all() and (np.diff(inc) <= 0).all())
    report(9, ok, "mean R_sum for C1=1..4: " + " ".join(f"{m:.3f}" for m in means)
                  + "; increments " + " ".join(f"{d:.3f}" for d in inc))
    assert ok


# runs last: it audits every GBD solve made above
def test_criterion_7_gbd_mechanics(mc):
    # one full-size instance with the iteration cap alone, no time limit
    inst = generate(DEFAULT, DEFAULT.rng_seed)
    rep = gbd.solve(inst, SolverConfig(c1=DEFAULT.c1, c2=DEFAULT.c2, max_iter=MAX_ITER))
    note_gbd("full-size instance without time limit", rep)
    runs = GBD_RUNS + mc.gbd_runs
    non_monotone = [r.label for r in runs if not r.monotone]
    unfinished = [r for r in runs if not r.proven or r.iterations > MAX_ITER]
    reasons = {}
    for r in unfinished:
        reasons[r.termination] = reasons.get(r.termination, 0) + 1
    ok = not non_monotone and not unfinished
    report(7, ok, f"{len(runs)} GBD runs; bounds monotone on {len(runs) - len(non_monotone)}; "
                  f"converged within {MAX_ITER} iterations on {len(runs) - len(unfinished)}"
                  + (f"; not converged: {reasons}" if reasons else "")
                  + f"; uncapped full-size run: {rep.state.termination} after {rep.state.iteration} "
                    f"iterations, gap {rep.gap:.3g}")
    assert ok
