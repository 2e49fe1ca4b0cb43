import json
import subprocess
import sys

import numpy as np
import pytest

from vqmc import cli
from vqmc.models import made_init, rbm_init, save_model
from vqmc.trainer import RunConfig, train


def run(*argv):
    return cli.main([str(a) for a in argv])


def parse_solve(*argv):
    return cli.resolve_run_config(cli.build_parser().parse_args(["solve", *argv]))


def test_defaults_resolve():
    cfg = parse_solve("--problem", "tim", "--n", "20", "--seed", "0", "--model", "made", "--sampler", "auto")
    assert cfg == RunConfig(problem="tim", n=20, seed=0, model="made", sampler="auto")
    assert cfg.iterations == 300 and cfg.batch_size == 1024 and cfg.resolved_lr == 0.01
    assert cfg.chains == 2 and cfg.mcmc_config().resolved_burn_in(20) == 160
    assert cfg.resolved_hidden(20) == round(5 * np.log(20) ** 2)
    assert parse_solve("--model", "rbm").sampler == "mcmc"
    assert parse_solve("--model", "rbm").resolved_hidden(20) == 20


def test_rejected_pairing_exit_code(capsys):
    assert run("solve", "--model", "made", "--sampler", "mcmc") == cli.EXIT_USAGE
    assert "--sampler" in capsys.readouterr().err


def test_unknown_and_malformed_flags():
    with pytest.raises(SystemExit) as info:
        run("solve", "--bogus", "1")
    assert info.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run("solve", "--n", "ten")
    assert info.value.code == cli.EXIT_USAGE


def test_config_file_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\nn = 9\niterations=7\nlr = 0.5\nmcmc-reburn = true\n")
    cfg = parse_solve("--config", str(conf), "--iterations", "3")
    assert (cfg.n, cfg.iterations, cfg.lr, cfg.mcmc_reburn) == (9, 3, 0.5, True)
    conf.write_text("unknown_key = 1\n")
    assert run("solve", "--config", conf) == cli.EXIT_USAGE
    conf.write_text("n = many\n")
    assert run("solve", "--config", conf) == cli.EXIT_USAGE


def test_solve_writes_curve_and_summary(tmp_path):
    out = tmp_path / "out"
    assert run("solve", "--problem", "maxcut", "--n", "8", "--iterations", "12", "--mbs", "64",
               "--eval-batch", "128", "--out", out) == cli.EXIT_OK
    lines = (out / "curve.csv").read_text().splitlines()
    assert lines[0] == "iter,energy_mean,energy_std,grad_norm,time_s"
    assert len(lines) == 13
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 0 and summary["config"]["hidden"] == 22
    assert summary["best_cut"] is not None and summary["iterations_run"] == 12


def test_curve_round_trip(tmp_path):
    cfg = RunConfig(problem="tim", n=5, iterations=6, mbs=16, eval_batch=16)
    result = train(cfg)
    curve, _ = cli.emit_results(result, tmp_path)
    back = cli.read_curve(curve)
    strip = lambda s: (s.iteration, s.energy_mean, s.energy_std, s.grad_norm, s.wall_time)
    assert [strip(s) for s in back] == [strip(s) for s in result.stats]
    # period decimal separator, no locale-dependent formatting
    assert all("," not in f for line in open(curve).read().splitlines()[1:] for f in line.split(",")[1:])


def test_summary_reproduces_run(tmp_path):
    assert run("solve", "--n", "6", "--iterations", "8", "--mbs", "32", "--seed", "4",
               "--out", tmp_path / "a") == 0
    assert run("solve", "--config", tmp_path / "a" / "summary.json", "--out", tmp_path / "b") == 0
    a = cli.read_curve(tmp_path / "a" / "curve.csv")
    b = cli.read_curve(tmp_path / "b" / "curve.csv")
    assert [(s.energy_mean, s.grad_norm) for s in a] == [(s.energy_mean, s.grad_norm) for s in b]


def test_instance_files_and_oracle(tmp_path, capsys):
    path = tmp_path / "g.txt"
    assert run("gen-instance", "--problem", "maxcut", "--n", "10", "--seed", "2", "--out", path) == 0
    assert run("oracle", path) == 0
    out = capsys.readouterr().out
    assert "max cut" in out
    tim = tmp_path / "t.txt"
    assert run("gen-instance", "--problem", "tim", "--n", "5", "--out", tim) == 0
    assert run("oracle", tim) == 0
    assert "lambda_min" in capsys.readouterr().out
    (tmp_path / "bad.txt").write_text("tim 2\npair 2 1 0.1\n")
    assert run("oracle", tmp_path / "bad.txt") == cli.EXIT_USAGE
    assert run("solve", "--problem", tim, "--iterations", "3", "--mbs", "8") == 0


def test_sample_test_zero_made(capsys):
    assert run("sample-test", "--n", "6", "--init", "zero") == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["auto"]["tv"] <= 0.02 and not report["rejected"]


def test_sample_test_random_made_n8():
    report = cli.sample_test(made_init(8, None, seed=1), 100_000, np.random.default_rng(0))
    assert report["auto"]["tv"] <= 0.02 and not report["rejected"]


def test_sample_test_corrupted_mask(tmp_path, capsys):
    m = made_init(5, 6, seed=0)
    m.set_parameters(np.random.default_rng(0).standard_normal(m.num_parameters))
    m.M2[0, :] = 1.0  # output 1 now sees every hidden unit
    report = cli.sample_test(m, 2000, np.random.default_rng(0))
    assert report["rejected"] and report["autoregressive_violations"] > 0


def test_sample_test_checkpoint_and_mcmc(tmp_path, capsys):
    path = tmp_path / "rbm.txt"
    save_model(rbm_init(4, 4, seed=0), path)
    assert run("sample-test", "--checkpoint", path, "--samples", "20000", "--burn-in", "200",
               "--thinning", "2") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mcmc"]["tv"] <= 0.05


def test_numerical_failure_exit_code(monkeypatch):
    from vqmc.estimator import NumericalError

    def boom(*a, **k):
        raise NumericalError("non-finite local energy")

    monkeypatch.setattr(cli, "train", boom)
    assert run("solve", "--n", "4", "--iterations", "1") == cli.EXIT_NUMERICAL


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vqmc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "solve" in proc.stdout


def test_benchmark_command(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert run("benchmark", "--sizes", "8", "--workers", "1,2", "--iterations", "1", "--out", out) == 0
    assert out.read_text().splitlines()[0].startswith("n,workers,mbs")
