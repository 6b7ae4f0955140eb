import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dalloc import bench, cli
from d2dalloc.bench import ScenarioConfig, generate
from d2dalloc.model import NetworkInstance, SolverConfig


class TestGenerate:
    def test_deterministic(self):
        a = generate(ScenarioConfig(), 3)
        b = generate(ScenarioConfig(), 3)
        np.testing.assert_array_equal(a.cu_positions, b.cu_positions)
        np.testing.assert_array_equal(a.gains.g_d2c, b.gains.g_d2c)
        c = generate(ScenarioConfig(), 4)
        assert not np.array_equal(a.cu_positions, c.cu_positions)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([25.0, 50.0, 100.0]),
           st.sampled_from([500.0, 1000.0, 1500.0]))
    def test_geometry(self, seed, r, R):
        inst = generate(ScenarioConfig(cluster_radius=r, cell_radius=R), seed)
        assert (np.hypot(*inst.cu_positions.T) <= R + 1e-9).all()
        for g in inst.groups:
            assert np.hypot(*g.transmitter_pos) <= R - r + 1e-9
            assert (np.hypot(*(g.receiver_positions - g.transmitter_pos).T) <= r + 1e-9).all()
        c = inst.constants
        assert (c.p_max_cell * inst.gains.g_cell / c.noise_power >= c.gamma_cell_th).all()

    def test_shapes(self):
        inst = generate(ScenarioConfig(K=3, M=5, group_size=2), 0)
        G = inst.gains
        assert G.g_cell.shape == (5,) and G.g_d2c.shape == (3, 5)
        assert all(a.shape == (5, 2) for a in G.g_d2d_self)
        assert all(a.shape == (3, 2) for a in G.g_d2d_cross)
        assert all((a[k] == 0).all() for k, a in enumerate(G.g_d2d_cross))

    def test_no_groups(self):
        inst = generate(ScenarioConfig(K=0), 0)
        assert inst.K == 0 and inst.M == 10

    def test_regular_placement(self):
        a = generate(ScenarioConfig(placement="regular", K=4), 0)
        b = generate(ScenarioConfig(placement="regular", K=4), 1)
        for ga, gb in zip(a.groups, b.groups):
            np.testing.assert_array_equal(ga.receiver_positions, gb.receiver_positions)
        with pytest.raises(ValueError):
            generate(ScenarioConfig(placement="regular", K=20), 0)

    @pytest.mark.parametrize("kw", [dict(cluster_radius=0.0), dict(cluster_radius=2000.0),
                                    dict(trials=0), dict(K=-1), dict(c1=0), dict(placement="x")])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            ScenarioConfig(**kw)


class TestBruteForce:
    def test_limit(self):
        with pytest.raises(ValueError):
            bench.brute_force(generate(ScenarioConfig(K=4, M=4), 0), SolverConfig())

    def test_pattern_count(self):
        rep = bench.brute_force(generate(ScenarioConfig(K=2, M=2), 0), SolverConfig(c1=1, c2=1))
        assert rep.info["patterns"] == 7


class TestHarness:
    def small(self, **kw):
        return ScenarioConfig(K=2, M=3, trials=2, c1=1, c2=1, **kw)

    def test_run_records(self):
        recs = bench.run(self.small(), ["greedy", "heuristic", "matching"])
        assert [(r.trial, r.algorithm) for r in recs] == [
            (0, "greedy"), (0, "heuristic"), (0, "matching"),
            (1, "greedy"), (1, "heuristic"), (1, "matching")]
        for r in recs:
            assert r.ok
            assert r.R_sum == pytest.approx(r.R_d2d_total + r.R_cell_total)
            assert r.seed == r.trial

    def test_common_seeds(self):
        a = bench.run(self.small(), ["heuristic"])
        b = bench.run(self.small(rng_seed=0), ["heuristic"])
        assert [r.R_sum for r in a] == [r.R_sum for r in b]

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            bench.run(self.small(), ["nope"])
        with pytest.raises(ValueError):
            bench.run(ScenarioConfig(K=2, M=3, trials=1), ["matching"])

    def test_errors_recorded(self, monkeypatch):
        def boom(inst, cfg):
            raise RuntimeError("boom")
        monkeypatch.setitem(bench.ALGORITHMS, "boom", boom)
        recs = bench.run(self.small(), ["boom"])
        assert all(not r.ok and "boom" in r.error for r in recs)
        assert all(math.isnan(r.R_sum) for r in recs)

    def test_sweep_and_aggregate(self, tmp_path):
        recs = bench.sweep(self.small(), "gamma", [5, 10], ["heuristic"])
        assert {r.sweep_param for r in recs} == {"gamma_db"}
        assert {r.sweep_value for r in recs} == {"5", "10"}
        rows = bench.aggregate(recs)
        row = next(x for x in rows if x["value"] == "5" and x["metric"] == "R_sum")
        assert row["count"] == 2
        assert row["mean"] == pytest.approx(
            bench.mean_of(recs, "heuristic", "R_sum", sweep_value="5"))
        p = tmp_path / "r.csv"
        bench.write_records(recs, p)
        back = bench.read_records(p)
        assert len(back) == len(recs)
        for a, b in zip(recs, back):
            assert a.R_sum == b.R_sum and a.trial == b.trial and a.algorithm == b.algorithm
            assert (math.isnan(a.fairness) and math.isnan(b.fairness)) or a.fairness == b.fairness
        bench.write_aggregate(rows, tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().startswith("param,value,algorithm,metric")

    def test_unknown_sweep_param(self):
        with pytest.raises(ValueError):
            bench.with_param(self.small(), "foo", 1)

    def test_config_from_dict(self):
        cfg = bench.config_from_dict({"K": 2, "radio": {"gamma_db": 15}})
        assert cfg.K == 2 and cfg.radio.gamma_d2d_th == pytest.approx(10 ** 1.5)
        with pytest.raises(ValueError):
            bench.config_from_dict({"radio": {"bogus": 1}})
        with pytest.raises(ValueError):
            bench.config_from_dict({"bogus": 1})


class TestCli:
    def test_gen_solve_bench(self, tmp_path, capsys):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"K": 2, "M": 3, "trials": 1, "c1": 1, "c2": 1}))
        inst = tmp_path / "i.json"
        assert cli.main(["gen", str(cfg), "--seed", "4", "--out", str(inst)]) == 0
        assert NetworkInstance.load(inst).K == 2
        capsys.readouterr()
        assert cli.main(["solve", str(inst), "--algo", "matching"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["algorithm"] == "matching" and out["violations"] == []
        assert cli.main(["solve", str(inst), "--algo", "gbd", "--verbose"]) == 0
        gb = json.loads(capsys.readouterr().out)
        assert gb["R_sum"] == pytest.approx(out["R_sum"], rel=1e-6)
        rec = tmp_path / "r.csv"
        assert cli.main(["bench", str(cfg), "--out", str(rec), "--algos", "greedy,heuristic",
                         "--sweep", "r=25,50", "--aggregate", str(tmp_path / "a.csv")]) == 0
        assert len(bench.read_records(rec)) == 4

    def test_bad_input(self, tmp_path, capsys):
        assert cli.main(["solve", str(tmp_path / "missing.json"), "--algo", "greedy"]) == 2
        assert "error" in capsys.readouterr().err
