import subprocess
import sys

import numpy as np
import pytest

from serd.cli import int_list, main
from serd.dynamics import Assignment, load_params, save_params
from serd.experiment import environment, parse_rows
from serd.gridworld import build, builtin_map, reference_params
from serd.mdp import ParamVector, TabularMdp, save_mdp
from serd.traj import avg_kl_policy, load_demos


def read_table(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1:]


def read_metrics(text):
    lines = text.strip().splitlines()
    assert lines[0] == "metric,value"
    return {k: float(v) for k, v in (line.split(",") for line in lines[1:])}


def json_problem(tmp_path, features, succ, theta_r, energies, gamma=0.9):
    S = succ.shape[0]
    mdp = TabularMdp(np.asarray(features, float), gamma, np.full(S, 1.0 / S), succ)
    save_mdp(tmp_path / "mdp.json", mdp)
    save_params(tmp_path / "p.json", ParamVector(theta_r, energies), Assignment.per_pair(succ), gamma)
    return ["--map", str(tmp_path / "mdp.json"), "--params", str(tmp_path / "p.json")]


class TestSolve:
    def test_self_loop_closed_form(self, tmp_path):
        flags = json_problem(tmp_path, [[[1.0]]], np.array([[[0]]]), [2.0], [0.0], gamma=0.9)
        assert main(["solve", *flags, "--out", str(tmp_path / "out")]) == 0
        assert read_table(tmp_path / "out" / "q.csv")[0, 0] == pytest.approx(2.0 / (1 - 0.9), abs=1e-8)
        assert read_table(tmp_path / "out" / "policy.csv")[0, 0] == 1.0

    def test_uniform_dynamics_zero_reward(self, tmp_path):
        succ = np.array([[[0, 1], [1, 2]], [[2, 0], [1, 1]], [[0, 2], [2, 1]]])
        flags = json_problem(tmp_path, np.ones((3, 2, 1)), succ, [0.0], np.zeros(12))
        assert main(["solve", *flags, "--out", str(tmp_path / "o")]) == 0
        assert np.allclose(read_table(tmp_path / "o" / "policy.csv"), 0.5, atol=1e-12)

    def test_grid_world_rows(self, tmp_path):
        assert main(["solve", "--map", "builtin:train16", "--out", str(tmp_path)]) == 0
        pol = read_table(tmp_path / "policy.csv")
        assert pol.shape == (256, 5)
        assert np.allclose(pol.sum(axis=1), 1.0, atol=1e-9)

    def test_iteration_cap_is_runtime_failure(self, tmp_path, capsys):
        code = main(["solve", "--map", "builtin:train16", "--out", str(tmp_path), "--max-steps", "1"])
        assert code == 1
        assert "failed" in capsys.readouterr().err


class TestInputErrors:
    def test_malformed_mdp(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text("{\"discount\": ")
        assert main(["solve", "--map", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_malformed_map(self, tmp_path, capsys):
        (tmp_path / "bad.txt").write_text("width 2\nheight 1\n")
        assert main(["solve", "--map", str(tmp_path / "bad.txt"), "--out", str(tmp_path)]) == 2
        assert capsys.readouterr().err

    def test_missing_demo_file(self, tmp_path):
        code = main(["train", "--map", "builtin:train16", "--demos", str(tmp_path / "none.txt"),
                     "--out", str(tmp_path / "p.json")])
        assert code == 2

    def test_demos_from_other_world(self, tmp_path):
        (tmp_path / "d.txt").write_text("# serd-demos count=1\n999:0\n")
        code = main(["estimate-dynamics", "--map", "builtin:train16", "--demos", str(tmp_path / "d.txt"),
                     "--out", str(tmp_path / "p.json")])
        assert code == 2

    def test_json_mdp_needs_params(self, tmp_path):
        json_problem(tmp_path, [[[1.0]]], np.array([[[0]]]), [1.0], [0.0])
        assert main(["solve", "--map", str(tmp_path / "mdp.json"), "--out", str(tmp_path)]) == 2

    def test_bad_arguments_exit_two(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--mode", "nope"])
        assert info.value.code == 2

    def test_int_list(self):
        assert int_list("1,2,4") == [1, 2, 4]
        assert int_list("0-3,7") == [0, 1, 2, 3, 7]


class TestPipeline:
    def test_sample_estimate_train_eval(self, tmp_path):
        demos = tmp_path / "demos.txt"
        assert main(["sample", "--map", "builtin:train16", "--out", str(demos), "--count", "6",
                     "--seed", "3"]) == 0
        ds = load_demos(demos)
        assert len(ds) == 6 and ds.seed == 3

        est = tmp_path / "m.json"
        assert main(["estimate-dynamics", "--map", "builtin:train16", "--demos", str(demos),
                     "--out", str(est)]) == 0
        pf = load_params(est)
        assert np.array_equal(pf.params.theta_r, [0.0, 0.0])
        assert np.allclose(np.exp(pf.params.theta_ta).reshape(9, 5).sum(axis=1), 1.0)

        trained, trace = tmp_path / "t.json", tmp_path / "trace.csv"
        assert main(["train", "--map", "builtin:train16", "--demos", str(demos), "--out", str(trained),
                     "--max-steps", "5", "--untie", "--trace", str(trace)]) == 0
        assert not load_params(trained).params.tied
        assert trace.read_text().splitlines()[0] == "step,log_likelihood,grad_norm,step_size"
        assert len(trace.read_text().splitlines()) == 6

        out = tmp_path / "metrics.csv"
        assert main(["eval", "--map", "builtin:train16", "--params", str(trained), "--demos", str(demos),
                     "--out", str(out)]) == 0
        metrics = read_metrics(out.read_text())
        assert set(metrics) == {"avg_loglik", "avg_kl_dynamics", "avg_kl_policy"}
        assert metrics["avg_loglik"] < 0 and metrics["avg_kl_dynamics"] > 0

    def test_true_params_transfer(self, tmp_path, capsys):
        ref = tmp_path / "ref.json"
        save_params(ref, reference_params(), build(builtin_map("train16")).assignment, 0.99,
                    include_assignment=False)
        assert main(["transfer", "--map", "builtin:transfer24", "--params", str(ref), "--count", "8"]) == 0
        metrics = read_metrics(capsys.readouterr().out)
        assert metrics["avg_kl_policy"] <= 1e-9
        assert set(metrics) == {"avg_loglik", "avg_kl_policy"}

    def test_uniform_params_transfer_uniform_policy(self, tmp_path, capsys):
        flat = tmp_path / "flat.json"
        save_params(flat, ParamVector([0.0, 0.0], np.zeros(45)), build(builtin_map("train16")).assignment,
                    0.99, include_assignment=False)
        assert main(["transfer", "--map", "builtin:transfer24", "--params", str(flat), "--count", "4"]) == 0
        metrics = read_metrics(capsys.readouterr().out)
        truth = environment("builtin:transfer24", 0.99, True, (6.0, 6.0)).solution.policy
        expected = avg_kl_policy(truth, np.full_like(truth, 0.2))
        assert metrics["avg_kl_policy"] == pytest.approx(expected, rel=1e-12)

    def test_experiment_tiny(self, tmp_path):
        out = tmp_path / "exp"
        code = main(["experiment", "--out", str(out), "--sizes", "0,1", "--seeds", "0",
                     "--estimators", "m-estimate-only", "--heldout", "4", "--quiet"])
        assert code == 0
        rows = parse_rows((out / "metrics.csv").read_text())
        assert len(rows) == 2 * (3 + 2)
        assert (out / "plan.json").exists()

    def test_experiment_rejects_bad_sizes(self, tmp_path):
        code = main(["experiment", "--out", str(tmp_path), "--sizes", "4,2", "--quiet"])
        assert code == 2

    def test_console_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "serd.cli", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        for name in ("solve", "sample", "estimate-dynamics", "train", "eval", "experiment", "transfer"):
            assert name in res.stdout
