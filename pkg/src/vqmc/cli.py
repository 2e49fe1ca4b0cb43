"""Command-line entry point: ``vqmc {solve,benchmark,oracle,sample-test,gen-instance}``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 sample test
rejected.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import hamiltonian as ham
from . import oracle
from .estimator import NumericalError, StepStats
from .models import check_autoregressive, load_model, made_init, rbm_init, save_model
from .optimizer import SRConvergenceError
from .sampler import McmcConfig, auto_sample, mcmc_sample
from .trainer import (
    PAIRING, ConfigError, RunConfig, RunResult, WorkerError, train, weak_scaling_benchmark,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_REJECTED = 0, 1, 2, 3
CURVE_HEADER = ["iter", "energy_mean", "energy_std", "grad_norm", "time_s"]
SAMPLE_TEST_ALPHA = 1e-3

log = logging.getLogger("vqmc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _burn_in(text: str):
    if text.replace(" ", "") == "3n+100":
        return None
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("burn-in must be >= 0")
    return value


# (flag, type, help); every one maps to the RunConfig field of the same name.
_SOLVE_FLAGS = [
    ("--problem", str, "tim, maxcut, or an instance file path"),
    ("--n", int, "number of spins for generated instances"),
    ("--instance-seed", int, "seed of the generated instance"),
    ("--model", str, "made or rbm"),
    ("--hidden", int, "hidden width (default 5 ln(n)^2 for MADE, n for RBM)"),
    ("--sampler", str, "auto or mcmc (default: the model's sampler)"),
    ("--chains", int, "MCMC chains"),
    ("--burn-in", _burn_in, "MCMC burn-in steps, or '3n+100'"),
    ("--thinning", int, "keep every j-th MCMC state"),
    ("--optimizer", str, "sgd, adam or sgd_sr"),
    ("--lr", float, "learning rate (default 0.1 SGD/SR, 0.01 ADAM)"),
    ("--sr-lambda", float, "SR diagonal shift"),
    ("--sr-tol", float, "SR CG relative tolerance"),
    ("--sr-maxiter", int, "SR CG iteration cap"),
    ("--iterations", int, "training iterations"),
    ("--workers", int, "data-parallel workers L"),
    ("--mbs", int, "samples per worker per iteration"),
    ("--seed", int, "global seed"),
    ("--eval-batch", int, "evaluation batch size"),
    ("--out", str, "output directory for curve.csv and summary.json"),
]
_SOLVE_SWITCHES = [
    ("--mcmc-reburn", "mcmc_reburn", "burn in again on every iteration"),
    ("--sr-fallback", "sr_fallback", "use the raw gradient when the SR solve fails"),
    ("--uncentered-fisher", "uncentered_fisher", "use the uncentred Fisher matrix"),
]
_FIELD_ALIASES = {"out": "out_dir"}
_BOOL_KEYS = {"mcmc_reburn", "sr_fallback", "uncentered_fisher"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="train a wavefunction on one instance")
    solve.add_argument("--config", help="key=value file; explicit flags take precedence")
    for flag, typ, help_ in _SOLVE_FLAGS:
        solve.add_argument(flag, type=typ, help=help_, default=argparse.SUPPRESS)
    for flag, dest, help_ in _SOLVE_SWITCHES:
        solve.add_argument(flag, dest=dest, action="store_true", help=help_, default=argparse.SUPPRESS)
    solve.add_argument("--save-model", help="write the trained model checkpoint here")

    bench = sub.add_parser("benchmark", help="weak-scaling timing matrix")
    bench.add_argument("--sizes", default="1000", help="comma-separated n values")
    bench.add_argument("--workers", default="1,2,4,8", help="comma-separated worker counts")
    bench.add_argument("--mbs", type=int, default=4)
    bench.add_argument("--iterations", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", help="CSV file for the table")

    orc = sub.add_parser("oracle", help="exact answers for small instances")
    orc.add_argument("instance", help="instance file (tim or graph)")
    orc.add_argument("--random-trials", type=int, default=1000)
    orc.add_argument("--seed", type=int, default=0)

    st = sub.add_parser("sample-test", help="goodness of fit of the samplers")
    st.add_argument("--checkpoint", help="model checkpoint (else a fresh model)")
    st.add_argument("--model", choices=["made", "rbm"], default="made")
    st.add_argument("--n", type=int, default=6)
    st.add_argument("--hidden", type=int)
    st.add_argument("--init", choices=["random", "zero"], default="random")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--samples", type=int, default=100_000)
    st.add_argument("--sampler", choices=["auto", "mcmc", "both"])
    st.add_argument("--burn-in", type=int, default=10_000)
    st.add_argument("--thinning", type=int, default=10)

    gen = sub.add_parser("gen-instance", help="write a random instance file")
    gen.add_argument("--problem", choices=["tim", "maxcut"], required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' comments; keys may use - or _."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def config_from_summary(path: str) -> dict:
    """RunConfig fields echoed in a summary.json, so a run can be repeated from it."""
    try:
        with open(path) as fh:
            echoed = json.load(fh)["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a run summary ({exc})") from None
    names = {f.name for f in dataclasses.fields(RunConfig)}
    return {k: v for k, v in echoed.items() if k in names}


def _coerce(key: str, text: str):
    if key in _BOOL_KEYS:
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {key!r}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    types = {flag[2:].replace("-", "_"): typ for flag, typ, _ in _SOLVE_FLAGS}
    if key not in types:
        raise UsageError(f"unknown config key {key!r}")
    try:
        return types[key](text)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < explicit flags."""
    merged, fields = {}, {}
    path = getattr(args, "config", None)
    if path and path.endswith(".json"):
        fields.update(config_from_summary(path))
    elif path:
        for key, text in read_config_file(path).items():
            merged[key] = _coerce(key, text)
    for key in [f[2:].replace("-", "_") for f, _, _ in _SOLVE_FLAGS] + list(_BOOL_KEYS):
        if hasattr(args, key):
            merged[key] = getattr(args, key)

    for key, value in merged.items():
        if key == "uncentered_fisher":
            fields["fisher_centered"] = not value
        else:
            fields[_FIELD_ALIASES.get(key, key)] = value
    if "sampler" not in fields and fields.get("model", "made") in PAIRING:
        fields["sampler"] = PAIRING[fields.get("model", "made")]
    cfg = RunConfig(**fields)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def emit_results(result: RunResult, out_dir: str, spec=None) -> tuple[str, str]:
    """Write curve.csv and summary.json into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    curve = os.path.join(out_dir, "curve.csv")
    with open(curve, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for s in result.stats:
            writer.writerow([s.iteration, repr(s.energy_mean), repr(s.energy_std),
                             repr(s.grad_norm), repr(s.wall_time)])
    cfg = result.config
    n = spec.n if spec is not None else cfg.n
    resolved = dataclasses.asdict(cfg)
    resolved.update(
        n=n,
        hidden=cfg.resolved_hidden(n),
        lr=cfg.resolved_lr,
        burn_in=cfg.mcmc_config().resolved_burn_in(n) if cfg.sampler == "mcmc" else None,
        batch_size=cfg.batch_size,
    )
    summary = {
        "final_energy": result.final_energy,
        "final_energy_std": result.final_energy_std,
        "best_cut": result.best_cut,
        "mean_cut": result.mean_cut,
        "iterations_run": len(result.stats),
        "wall_time_s": result.wall_time,
        "phase_times_s": result.phase_times,
        "num_parameters": int(result.model.num_parameters) if result.model is not None else None,
        "config": resolved,
    }
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return curve, path


def read_curve(path: str) -> list[StepStats]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            StepStats(int(r["iter"]), float(r["energy_mean"]), float(r["energy_std"]),
                      float(r["grad_norm"]), float(r["time_s"]))
            for r in reader
        ]


def sample_test(model, num_samples: int, rng, sampler: str | None = None,
                mcmc: McmcConfig | None = None) -> dict:
    """Compare sampler output with the enumerated distribution.

    ``rejected`` is set when the AUTO chi-square test rejects at
    SAMPLE_TEST_ALPHA or the MADE masks break the autoregressive property.
    """
    sampler = sampler or ("auto" if model.kind == "made" else "mcmc")
    target = oracle.enumerate_distribution(model)
    report = {"n": model.n, "samples": num_samples, "rejected": False}
    if model.kind == "made":
        violations = check_autoregressive(model)
        report["autoregressive_violations"] = len(violations)
        if violations:
            report["rejected"] = True
    runs = ["auto", "mcmc"] if sampler == "both" else [sampler]
    for kind in runs:
        if kind == "auto":
            if model.kind != "made":
                raise UsageError("AUTO sampling needs a MADE model")
            configs = auto_sample(model, num_samples, rng).configs
        else:
            mcmc = mcmc or McmcConfig(chains=2, burn_in=10_000, thinning=10)
            configs = mcmc_sample(model, num_samples - num_samples % mcmc.chains, mcmc, rng)[0].configs
        freq = oracle.empirical_distribution(configs)
        stat, dof, pvalue = oracle.chisquare_test(freq * len(configs), target)
        report[kind] = {"tv": oracle.tv_distance(freq, target), "chi2": stat, "dof": dof, "p_value": pvalue}
        if kind == "auto" and pvalue < SAMPLE_TEST_ALPHA:
            report["rejected"] = True
    return report


def _cmd_solve(args) -> int:
    cfg = resolve_run_config(args)
    spec = cfg.build_spec()
    log.info("solving %s (n=%d) with %s+%s/%s, %d x %d samples",
             cfg.problem, spec.n, cfg.model, cfg.sampler, cfg.optimizer, cfg.workers, cfg.mbs)
    result = train(cfg, spec)
    if cfg.out_dir:
        emit_results(result, cfg.out_dir, spec)
    if args.save_model:
        save_model(result.model, args.save_model)
    line = f"final energy {result.final_energy:.6f} +- {result.final_energy_std:.4f}"
    if result.best_cut is not None:
        line += f"  best cut {result.best_cut:g}  mean cut {result.mean_cut:.2f}"
    print(line)
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    workers = [int(s) for s in args.workers.split(",")]
    rows = weak_scaling_benchmark(sizes, workers, args.mbs, args.iterations, seed=args.seed)
    print(f"{'n':>6} {'L':>3} {'mbs':>5} {'s/iter':>10} {'normalized':>10}")
    for r in rows:
        print(f"{r['n']:>6} {r['workers']:>3} {r['mbs']:>5} {r['seconds_per_iter']:>10.4f} {r['normalized']:>10.3f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    spec = ham.load_spec(args.instance)
    if spec.num_edges is not None:
        adj = ham.adjacency_of(spec)
        best, x = oracle.brute_force_maxcut(adj)
        mean, rbest = oracle.random_cut_baseline(adj, args.random_trials, np.random.default_rng(args.seed))
        print(f"max cut {best}  edges {spec.num_edges}  argmax {''.join(map(str, x.tolist()))}")
        print(f"random cut: mean {mean:.3f} best {rbest} over {args.random_trials} trials")
    else:
        lam, _ = oracle.ground_state(spec)
        print(f"lambda_min {lam!r}")
    return EXIT_OK


def _cmd_sample_test(args) -> int:
    if args.checkpoint:
        model = load_model(args.checkpoint)
    elif args.model == "made":
        model = made_init(args.n, args.hidden, args.seed)
    else:
        model = rbm_init(args.n, args.hidden, args.seed)
    if args.init == "zero" and not args.checkpoint:
        model.set_parameters(np.zeros(model.num_parameters))
    mcmc = McmcConfig(chains=2, burn_in=args.burn_in, thinning=args.thinning)
    report = sample_test(model, args.samples, np.random.default_rng(args.seed + 1), args.sampler, mcmc)
    print(json.dumps(report, indent=2))
    return EXIT_REJECTED if report["rejected"] else EXIT_OK


def _cmd_gen_instance(args) -> int:
    if args.problem == "tim":
        spec = ham.random_tim(args.n, args.seed)
    else:
        spec = ham.maxcut_spec(ham.random_maxcut_graph(args.n, args.seed))
    ham.save_spec(spec, args.out)
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "benchmark": _cmd_benchmark,
    "oracle": _cmd_oracle,
    "sample-test": _cmd_sample_test,
    "gen-instance": _cmd_gen_instance,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ham.InstanceFormatError) as exc:
        print(f"vqmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SRConvergenceError) as exc:
        print(f"vqmc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except WorkerError as exc:
        if isinstance(exc.__cause__, (NumericalError, SRConvergenceError)):
            print(f"vqmc: numerical failure: {exc.__cause__}", file=sys.stderr)
            return EXIT_NUMERICAL
        raise


if __name__ == "__main__":
    sys.exit(main())
