import subprocess
import sys
from math import comb

import pytest
import yaml

from moboseq.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_NOOP, EXIT_OK, EXIT_ORACLE, EXIT_TOO_LARGE, main
from moboseq.oracle import echo_oracle_command

RUN_FILES = ("runlog.csv", "front.csv", "hv_trace.csv", "entropy_trace.csv", "diagnostics.csv")
DERIVED = ("front.csv", "hv_trace.csv", "entropy_trace.csv")


def base_config(**kw):
    data = {
        "space": {"parental": "AAAAAAAA", "positions": {i: "ACDE" for i in range(8)}, "max_mutations": 3,
                  "liabilities": []},
        "oracles": [
            {"name": "f1", "direction": "maximize", "params": {"type": "pwm", "random": {"seed": 0}}},
            {"name": "f2", "direction": "maximize", "params": {"type": "pwm", "random": {"seed": 0, "anti": True}}},
        ],
        "method": "boat-ehvi",
        "n_init": 10,
        "budget": 20,
        "ga": {"population_size": 8, "generations": 2},
        "surrogate": {"grid_size": 2, "max_evaluations": 4},
    }
    data.update(kw)
    return data


@pytest.fixture
def write_config(tmp_path):
    def write(data, name="config.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return write


def test_exit_codes_are_stable():
    assert (EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ORACLE, EXIT_NOOP, EXIT_TOO_LARGE) == (0, 1, 2, 3, 4, 5)


class TestRun:
    def test_valid_config(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write_config(base_config()), "-o", str(out)]) == EXIT_OK
        for name in RUN_FILES:
            assert (out / name).exists(), name
        assert len((out / "runlog.csv").read_text().splitlines()) == 21

    def test_unknown_key(self, write_config, tmp_path, capsys):
        data = base_config()
        data["methd"] = data.pop("method")
        assert main(["run", write_config(data), "-o", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "methd" in capsys.readouterr().err

    def test_unknown_nested_key(self, write_config, tmp_path, capsys):
        data = base_config(ga={"popsize": 3})
        assert main(["run", write_config(data), "-o", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "popsize" in capsys.readouterr().err

    def test_budget_override(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write_config(base_config(method="random")), "budget=200", "-o", str(out)]) == EXIT_OK
        assert len((out / "runlog.csv").read_text().splitlines()) == 1 + 200

    def test_nested_override(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write_config(base_config(method="random")), "space.max_mutations=1", "-o", str(out)]) == 0
        seqs = [r.split(",")[1] for r in (out / "runlog.csv").read_text().splitlines()[1:]]
        assert all(sum(c != "A" for c in s) <= 1 for s in seqs)

    def test_budget_zero(self, write_config, tmp_path):
        assert main(["run", write_config(base_config()), "budget=0", "-o", str(tmp_path / "o")]) == EXIT_NOOP

    def test_budget_below_n_init(self, write_config, tmp_path):
        assert main(["run", write_config(base_config()), "budget=5", "-o", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_oracle_failure(self, write_config, tmp_path, capsys):
        data = base_config(method="random", oracles=[
            {"name": "e", "kind": "external", "direction": "maximize", "command": echo_oracle_command("crash")}])
        assert main(["run", write_config(data), "-o", str(tmp_path / "o")]) == EXIT_ORACLE
        assert "oracle" in capsys.readouterr().err

    def test_other_error(self, write_config, tmp_path):
        # five feasible sequences cannot supply ten distinct evaluations
        data = base_config(method="random", n_init=2, budget=10,
                           space={"parental": "A", "positions": {0: "ACDEF"}, "max_mutations": 1, "liabilities": []})
        assert main(["run", write_config(data), "-o", str(tmp_path / "o")]) == EXIT_ERROR

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_space_file(self, write_config, tmp_path):
        data = base_config(method="random")
        (tmp_path / "space.yaml").write_text(yaml.safe_dump(data.pop("space")))
        data["space_file"] = "space.yaml"
        assert main(["run", write_config(data), "-o", str(tmp_path / "o")]) == EXIT_OK


class TestEnumerate:
    def test_toy_space_of_five(self, write_config, tmp_path):
        data = base_config(space={"parental": "A", "positions": {0: "ACDEF"}, "max_mutations": 1, "liabilities": []})
        out = tmp_path / "gt"
        assert main(["enumerate", write_config(data), "-o", str(out)]) == EXIT_OK
        assert (out / "space_count.txt").read_text().strip() == "5"
        for name in ("ground_truth_front.csv", "ground_truth_hv.txt"):
            assert (out / name).exists()

    @pytest.mark.parametrize("k,d,m", [(6, 3, 2), (8, 3, 3), (5, 2, 5)])
    def test_cdr_count_closed_form(self, write_config, tmp_path, k, d, m):
        letters = "ACDEFG"[: d + 1]
        space = {"parental": "A" * k, "positions": {i: letters for i in range(k)}, "max_mutations": m,
                 "liabilities": []}
        out = tmp_path / "gt"
        assert main(["enumerate", write_config(base_config(space=space)), "-o", str(out)]) == EXIT_OK
        expected = sum(comb(k, j) * d**j for j in range(m + 1))
        assert int((out / "space_count.txt").read_text()) == expected

    def test_rerun_bit_identical(self, write_config, tmp_path):
        path = write_config(base_config())
        assert main(["enumerate", path, "-o", str(tmp_path / "a")]) == EXIT_OK
        assert main(["enumerate", path, "-o", str(tmp_path / "b")]) == EXIT_OK
        for name in ("ground_truth_front.csv", "ground_truth_hv.txt", "space_count.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_too_large(self, write_config, tmp_path):
        space = {"parental": "A" * 30, "positions": {i: "ACDEFGHIKL" for i in range(30)}, "max_mutations": 10,
                 "liabilities": []}
        assert main(["enumerate", write_config(base_config(space=space)), "-o", str(tmp_path / "g")]) == EXIT_TOO_LARGE


class TestReport:
    def test_regenerates_from_runlog_alone(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write_config(base_config()), "-o", str(out)]) == EXIT_OK
        before = {n: (out / n).read_bytes() for n in DERIVED}
        for n in DERIVED:
            (out / n).unlink()
        assert main(["report", str(out)]) == EXIT_OK
        assert {n: (out / n).read_bytes() for n in DERIVED} == before

    def test_explicit_reference_without_snapshot(self, write_config, tmp_path):
        out = tmp_path / "out"
        main(["run", write_config(base_config(method="random")), "-o", str(out)])
        (out / "config.snapshot").unlink()
        assert main(["report", str(out)]) == EXIT_CONFIG
        assert main(["report", str(out), "--reference", "-10", "-10"]) == EXIT_OK
        assert (out / "hv_trace.csv").exists()

    def test_missing_runlog(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_CONFIG


class TestBenchmark:
    def test_two_methods_two_seeds(self, write_config, tmp_path):
        data = base_config(benchmark={"seeds": [0, 1], "methods": ["random", "nsga2"], "ground_truth": True})
        out = tmp_path / "bench"
        assert main(["benchmark", write_config(data), "-o", str(out)]) == EXIT_OK
        assert len(list((out / "runs").iterdir())) == 4
        for name in ("hv_mean_se.csv", "entropy_hv_scatter.csv", "summary.txt"):
            assert (out / name).exists()
        scatter = (out / "entropy_hv_scatter.csv").read_text().splitlines()[1:]
        fractions = [float(r.split(",")[-1]) for r in scatter]
        assert len(fractions) == 4 and all(0 <= f <= 1 for f in fractions)

    def test_duplicate_labels_rejected(self, write_config, tmp_path):
        data = base_config(benchmark={"methods": ["random", "random"]})
        assert main(["benchmark", write_config(data), "-o", str(tmp_path / "b")]) == EXIT_CONFIG

    def test_unknown_benchmark_key(self, write_config, tmp_path):
        data = base_config(benchmark={"sedes": [0]})
        assert main(["benchmark", write_config(data), "-o", str(tmp_path / "b")]) == EXIT_CONFIG


class TestOracleCheck:
    def test_bundled_oracle_passes(self, capsys):
        assert main(["oracle-check", "--command", *echo_oracle_command("normal")]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines and all("\tPASS\t" in line for line in lines)

    def test_misaligned_fails_alignment(self, capsys):
        assert main(["oracle-check", "--command", *echo_oracle_command("misaligned")]) == EXIT_ORACLE
        out = capsys.readouterr().out
        assert any(line.split("\t")[1:3] == ["alignment", "FAIL"] for line in out.splitlines())

    def test_nondeterministic_fails_determinism(self, capsys):
        assert main(["oracle-check", "--command", *echo_oracle_command("random")]) == EXIT_ORACLE
        fail = [line for line in capsys.readouterr().out.splitlines() if line.split("\t")[1:3] == ["determinism", "FAIL"]]
        assert len(fail) == 1
        # both score vectors are shown
        assert fail[0].count("[") >= 2

    def test_from_config_file(self, write_config):
        data = {"oracles": [{"name": "e", "kind": "external", "direction": "maximize",
                             "command": echo_oracle_command("normal")}]}
        assert main(["oracle-check", write_config(data)]) == EXIT_OK

    def test_no_external_oracle(self, write_config):
        assert main(["oracle-check", write_config(base_config())]) == EXIT_CONFIG


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "moboseq", "--help"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    for sub in ("run", "benchmark", "enumerate", "report", "oracle-check"):
        assert sub in res.stdout
