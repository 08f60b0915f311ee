import itertools

import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose, assert_array_equal

import moboseq.engine as engine
from moboseq.config import config_from_dict
from moboseq.engine import (
    BenchmarkReport,
    below_random_flags,
    benchmark,
    entropy_trace,
    hv_trace,
    run,
)
from moboseq.errors import OracleFailure
from moboseq.oracle import brute_force_front, build_oracle, echo_oracle_command
from moboseq.pareto import hypervolume, non_dominated_sort, shannon_entropy
from moboseq.runlog import Evaluation, RunLog
from moboseq.seqspace import enumerate_space

RUN_FILES = ("config.snapshot", "runlog.csv", "front.csv", "hv_trace.csv", "entropy_trace.csv", "diagnostics.csv")

TOY_SPACE = {"parental": "AAAAAAAA", "positions": {i: "ACDE" for i in range(8)}, "max_mutations": 3,
             "liabilities": []}
# cheap inner loops; the arithmetic under test does not depend on them
FAST = {"ga": {"population_size": 8, "generations": 2}, "acquisition": {"mc_samples": 8},
        "surrogate": {"grid_size": 2, "max_evaluations": 4}}


def pwm_pair(seed=0):
    return [
        {"name": "f1", "direction": "maximize", "params": {"type": "pwm", "random": {"seed": seed}}},
        {"name": "f2", "direction": "maximize", "params": {"type": "pwm", "random": {"seed": seed, "anti": True}}},
    ]


def make_config(**kw):
    data = {"space": TOY_SPACE, "oracles": pwm_pair(), "n_init": 10, "budget": 30, **FAST}
    data.update(kw)
    return config_from_dict(data)


class TestIterationArithmetic:
    def test_budget_equals_n_init_means_no_iterations(self):
        cfg = make_config(method="boat-qehvi", budget=10)
        log = run(cfg)
        assert log.diagnostics == []
        assert log.phases == ["init"] * 10
        assert log.status == "complete"

    def test_counted_init(self):
        log = run(make_config(method="boat-qehvi", q=4, n_init=10, budget=50))
        assert len(log.diagnostics) == 10
        assert len(log) == 50

    def test_tail_batch_is_truncated(self):
        log = run(make_config(method="boat-qehvi", q=4, n_init=10, budget=32))
        assert len(log.diagnostics) == 6
        assert len(log) == 32

    def test_225_iterations_when_init_counted(self):
        # (1000 - 100) / 4
        cfg = config_from_dict({"space": TOY_SPACE, "oracles": pwm_pair(), "method": "boat-qehvi", "q": 4,
                                "budget": 1000, "n_init": 100, "ga": {"population_size": 4, "generations": 1},
                                "acquisition": {"mc_samples": 2},
                                "surrogate": {"grid_size": 2, "max_evaluations": 3}})
        log = run(cfg)
        assert len(log.diagnostics) == 225
        assert len(log) == 1000
        assert log.phases.count("bo") == 900

    def test_250_iterations_when_init_excluded(self):
        cfg = config_from_dict({"space": TOY_SPACE, "oracles": pwm_pair(), "method": "boat-qehvi", "q": 4,
                                "budget": 1000, "n_init": 100, "count_init_in_budget": False,
                                "ga": {"population_size": 4, "generations": 1}, "acquisition": {"mc_samples": 2},
                                "surrogate": {"grid_size": 2, "max_evaluations": 3}})
        log = run(cfg)
        assert len(log.diagnostics) == 250
        assert all(d.n_train == 100 + 4 * i for i, d in enumerate(log.diagnostics))
        assert len(log) == 1100


METHODS = ["boat-ehvi", "boat-qehvi", "boat-qnehvi", "ga-sum", "nsga2", "random"]


class TestRunInvariants:
    @pytest.mark.parametrize("method", METHODS)
    def test_budget_exact_and_no_repeats(self, method):
        log = run(make_config(method=method, q=3))
        assert len(log) == 30
        assert len(set(log.sequences)) == 30
        assert [e.call_index for e in log.evaluations] == list(range(30))
        assert log.phases[:10] == ["init"] * 10

    @pytest.mark.parametrize("method", METHODS)
    def test_byte_identical_runlog(self, method, tmp_path):
        cfg = make_config(method=method, q=2, seed=5)
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        assert (tmp_path / "a" / "runlog.csv").read_bytes() == (tmp_path / "b" / "runlog.csv").read_bytes()

    def test_logei_single_objective(self, tmp_path):
        cfg = make_config(method="boat-logei", oracles=pwm_pair()[:1], seed=2)
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        assert (tmp_path / "a" / "runlog.csv").read_bytes() == (tmp_path / "b" / "runlog.csv").read_bytes()

    def test_seed_changes_run(self):
        a, b = (run(make_config(method="random", seed=s)) for s in (0, 1))
        assert a.sequences != b.sequences

    @pytest.mark.parametrize("method", ["boat-ehvi", "boat-qehvi"])
    def test_prefix_determinism(self, method):
        short = run(make_config(method=method, q=2, budget=20))
        long = run(make_config(method=method, q=2, budget=30))
        assert long.sequences[:20] == short.sequences

    def test_baselines_share_initial_set(self):
        inits = [run(make_config(method=m, seed=3)).sequences[:10] for m in ("boat-ehvi", "ga-sum", "nsga2", "random")]
        assert all(i == inits[0] for i in inits)

    def test_feasible(self):
        cfg = make_config(method="boat-qehvi", q=3)
        enumerable = set(enumerate_space(cfg.space))
        assert set(run(cfg).sequences) <= enumerable

    def test_budget_zero_is_noop(self):
        log = run(make_config(budget=0))
        assert len(log) == 0 and log.status == "no-op"


@pytest.fixture(scope="module")
def dominant_lookup():
    """Two lookup objectives on a small space; one sequence beats every other in both."""
    space = {"parental": "AAAAAA", "positions": {i: "ACD" for i in range(6)}, "max_mutations": 4, "liabilities": []}
    cfg0 = config_from_dict({"space": space, "oracles": pwm_pair()})
    target = "CADACA"
    members = enumerate_space(cfg0.space)
    rng = np.random.default_rng(0)
    t1, t2 = {}, {}
    for s in members:
        matches = sum(a == b for a, b in zip(s, target))
        u = rng.random(2) if s != target else np.ones(2)
        t1[s], t2[s] = matches + 0.5 * u[0], matches + 0.5 * u[1]
    oracles = [
        {"name": "f1", "direction": "maximize", "params": {"type": "lookup", "table": t1}},
        {"name": "f2", "direction": "maximize", "params": {"type": "lookup", "table": t2}},
    ]
    return space, oracles, target


class TestDominantOptimum:
    def test_enumeration_confirms_single_dominant(self, dominant_lookup):
        space, oracles, target = dominant_lookup
        cfg = config_from_dict({"space": space, "oracles": oracles})
        gt = brute_force_front(cfg.space, [build_oracle(s, cfg.space) for s in cfg.oracles])
        assert gt.front.ids == [target]

    def test_ehvi_finds_it_and_plateaus(self, dominant_lookup):
        space, oracles, target = dominant_lookup
        cfg = config_from_dict({"space": space, "oracles": oracles, "method": "boat-ehvi", "n_init": 10,
                                "budget": 60, "reference": [0.0, 0.0], "seed": 0})
        gt = brute_force_front(cfg.space, [build_oracle(s, cfg.space) for s in cfg.oracles], reference=[0.0, 0.0])
        log = run(cfg)
        assert target in log.sequences
        hit = log.sequences.index(target)
        assert log.phases[hit] == "bo"
        tr = hv_trace(log, [0.0, 0.0])
        assert_allclose(tr[hit:, 1], gt.hypervolume, rtol=0, atol=1e-12)
        assert np.all(tr[:hit, 1] < gt.hypervolume)


def synthetic_log(scores, seqs=None):
    scores = np.asarray(scores, float)
    seqs = seqs or [f"S{i}" for i in range(len(scores))]
    log = RunLog(k=scores.shape[1])
    log.evaluations = [Evaluation(i, s, "init", y) for i, (s, y) in enumerate(zip(seqs, scores))]
    return log


class TestTraces:
    def test_hv_trace_monotone_and_consistent(self, rng):
        Y = rng.random((60, 3))
        ref = np.zeros(3)
        tr = hv_trace(synthetic_log(Y), ref)
        assert_array_equal(tr[:, 0], np.arange(1, 61))
        assert np.all(np.diff(tr[:, 1]) >= 0)
        front = Y[non_dominated_sort(Y)[0]]
        assert_allclose(tr[-1, 1], hypervolume(front, ref), rtol=1e-12)

    def test_hv_trace_replay_bit_identical(self, rng):
        log = synthetic_log(rng.random((40, 2)))
        assert hv_trace(log, [0, 0]).tobytes() == hv_trace(log, [0, 0]).tobytes()

    def test_hv_trace_final_invariant_to_order(self, rng):
        Y = rng.random((30, 2))
        a = hv_trace(synthetic_log(Y), [0, 0])[-1, 1]
        b = hv_trace(synthetic_log(Y[rng.permutation(30)]), [0, 0])[-1, 1]
        assert_allclose(a, b, rtol=1e-12)

    def test_hv_trace_fixed_reference(self, rng):
        # points below the reference contribute nothing
        tr = hv_trace(synthetic_log([[-1.0, -1.0], [1.0, 2.0]]), [0, 0])
        assert_array_equal(tr[:, 1], [0.0, 2.0])

    def test_entropy_identical_sequences_zero(self):
        log = synthetic_log(np.zeros((250, 1)), ["ACDE"] * 250)
        et = entropy_trace(log, 100)
        assert_array_equal(et[:, 0], [100, 200, 250])
        assert np.all(et[:, 1:] == 0)

    def test_entropy_checkpoints(self, rng):
        seqs = ["".join(rng.choice(list("ACDE"), 6)) for _ in range(300)]
        et = entropy_trace(synthetic_log(np.zeros((300, 1)), seqs), 100)
        assert et[0, 0] == 100
        assert_allclose(et[-1, 1], shannon_entropy(seqs), rtol=1e-12)
        assert_allclose(et[1, 2], shannon_entropy(seqs[100:200]), rtol=1e-12)

    def test_entropy_window_validated(self):
        with pytest.raises(ValueError):
            entropy_trace(synthetic_log(np.zeros((3, 1))), 0)


class TestRunFiles:
    def test_all_files_written(self, tmp_path):
        cfg = make_config(method="boat-ehvi")
        log = run(cfg, tmp_path)
        for name in RUN_FILES:
            assert (tmp_path / name).exists(), name
        rows = (tmp_path / "runlog.csv").read_text().splitlines()
        assert rows[0] == "call_index,sequence,phase,score_1,score_2"
        assert len(rows) == 31
        diag = (tmp_path / "diagnostics.csv").read_text().splitlines()
        assert len(diag) == 1 + len(log.diagnostics) == 21
        snap = yaml.safe_load((tmp_path / "config.snapshot").read_text())
        assert snap["status"] == "complete"
        assert len(snap["resolved_reference"]) == 2

    def test_runlog_round_trip(self, tmp_path):
        log = run(make_config(method="random"), tmp_path)
        back = RunLog.from_csv(tmp_path / "runlog.csv")
        assert back.sequences == log.sequences
        assert_array_equal(back.scores, log.scores)

    def test_hv_trace_file_matches(self, tmp_path):
        log = run(make_config(method="nsga2"), tmp_path)
        ref = yaml.safe_load((tmp_path / "config.snapshot").read_text())["resolved_reference"]
        body = np.loadtxt(tmp_path / "hv_trace.csv", delimiter=",", skiprows=1)
        assert_array_equal(body, hv_trace(log, ref))

    def test_no_temporary_files_left(self, tmp_path):
        run(make_config(method="boat-ehvi"), tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == sorted(RUN_FILES)

    def test_error_leaves_partial_log(self, tmp_path, monkeypatch):
        calls = itertools.count()
        real_fit = engine.fit

        def failing_fit(*a, **kw):
            if next(calls) == 3:
                raise RuntimeError("surrogate broke")
            return real_fit(*a, **kw)

        monkeypatch.setattr(engine, "fit", failing_fit)
        with pytest.raises(RuntimeError):
            run(make_config(method="boat-ehvi"), tmp_path)
        back = RunLog.from_csv(tmp_path / "runlog.csv")
        assert len(back) == 13
        snap = yaml.safe_load((tmp_path / "config.snapshot").read_text())
        assert snap["status"].startswith("error: RuntimeError")
        assert (tmp_path / "hv_trace.csv").exists()

    def test_oracle_failure_at_init(self, tmp_path):
        oracles = [{"name": "e", "kind": "external", "direction": "maximize", "command": echo_oracle_command("crash")}]
        with pytest.raises(OracleFailure):
            run(make_config(method="random", oracles=oracles), tmp_path)
        assert len(RunLog.from_csv(tmp_path / "runlog.csv")) == 0
        assert yaml.safe_load((tmp_path / "config.snapshot").read_text())["status"].startswith("error")


class TestResume:
    def test_resume_replays_without_queries(self, tmp_path, monkeypatch):
        cfg = make_config(method="boat-ehvi", seed=4)
        full = run(cfg, tmp_path / "full")
        part = tmp_path / "part"
        part.mkdir()
        lines = (tmp_path / "full" / "runlog.csv").read_text().splitlines(keepends=True)
        (part / "runlog.csv").write_text("".join(lines[:21]))

        counted = []
        real_build = engine.build_oracle

        def counting_build(spec, space):
            o = real_build(spec, space)
            inner = o.score_batch

            def score_batch(seqs):
                counted.extend(seqs)
                return inner(seqs)

            o.score_batch = score_batch
            return o

        monkeypatch.setattr(engine, "build_oracle", counting_build)
        resumed = run(cfg, part, resume=True)
        assert resumed.sequences == full.sequences
        assert (part / "runlog.csv").read_bytes() == (tmp_path / "full" / "runlog.csv").read_bytes()
        # 20 replayed calls, 10 fresh ones scored on both objectives
        assert sorted(set(counted)) == sorted(full.sequences[20:])


class TestBenchmark:
    def test_single_run_reduces_to_its_trace(self, tmp_path):
        cfg = make_config(method="random", reference=[-5.0, -5.0])
        rep = benchmark([("random", 0, cfg)], out_dir=tmp_path)
        mean, se = rep.mean_se("random")
        assert_array_equal(mean, hv_trace(rep.logs["random"][0], [-5.0, -5.0])[:, 1])
        assert np.all(se == 0)
        assert (tmp_path / "runs" / "random_seed0" / "runlog.csv").exists()

    def test_aggregates_mean_and_se(self, tmp_path):
        configs = [(m, s, make_config(method=m, seed=s, reference=[-5.0, -5.0]))
                   for m in ("random", "nsga2") for s in (0, 1)]
        rep = benchmark(configs, out_dir=tmp_path)
        for m in ("random", "nsga2"):
            traces = np.stack([hv_trace(l, [-5.0, -5.0])[:, 1] for l in rep.logs[m]])
            mean, se = rep.mean_se(m)
            assert_allclose(mean, (traces[0] + traces[1]) / 2, rtol=1e-15)
            assert_allclose(se, np.abs(traces[0] - traces[1]) / 2, rtol=1e-12, atol=1e-15)
        rows = (tmp_path / "hv_mean_se.csv").read_text().splitlines()
        assert rows[0] == "method,oracle_calls,mean,se,n_seeds"
        assert len(rows) == 1 + 2 * 30
        assert len(list((tmp_path / "runs").iterdir())) == 4
        scatter = (tmp_path / "entropy_hv_scatter.csv").read_text().splitlines()
        assert len(scatter) == 5

    def test_ground_truth_fraction_in_unit_interval(self, tmp_path):
        cfg = make_config(method="nsga2")
        gt = brute_force_front(cfg.space, [build_oracle(s, cfg.space) for s in cfg.oracles])
        rep = benchmark([("nsga2", s, make_config(method="nsga2", seed=s)) for s in (0, 1)], ground_truth=gt,
                        out_dir=tmp_path)
        frac = rep.fraction("nsga2")
        assert np.all((frac >= 0) & (frac <= 1))
        assert_array_equal(rep.reference, gt.reference)
        assert "ground-truth fraction" in (tmp_path / "summary.txt").read_text()

    def test_flags_methods_below_random(self):
        hv = {"random": np.array([[0.0, 2.0], [0.0, 2.0]]), "a": np.array([[0.0, 1.0], [0.0, 1.5]]),
              "b": np.array([[0.0, 3.0], [0.0, 3.0]])}
        rep = BenchmarkReport(np.zeros(2), {}, hv, {})
        flags = below_random_flags(rep)
        assert len(flags) == 1 and flags[0].startswith("a ")

    def test_no_flags_without_random(self):
        rep = BenchmarkReport(np.zeros(2), {}, {"a": np.ones((2, 3))}, {})
        assert below_random_flags(rep) == []
