"""Training loop with data-parallel sampling.

Each of the ``workers`` replicas draws ``mbs`` samples from its own RNG
stream, computes a local gradient, and the gradients are averaged by a
fixed-order pairwise tree. Every replica then applies the same optimizer
step, so parameters stay bitwise identical. Workers are threads; numpy
releases the GIL inside its kernels.
"""

from __future__ import annotations

import contextlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import hamiltonian as ham
from .estimator import FisherOperator, StepStats, gradient_estimate, local_energy, score_vectors
from .models import default_made_hidden, made_init, rbm_init
from .optimizer import DEFAULT_LR, KINDS, OptimizerState, apply_update
from .sampler import ChainState, McmcConfig, SampleBatch, auto_sample, mcmc_sample

log = logging.getLogger(__name__)

PAIRING = {"made": "auto", "rbm": "mcmc"}
_INIT_KEY = (0, 0)
_EVAL_KEY = (0, 1)


class ConfigError(ValueError):
    pass


class WorkerError(RuntimeError):
    pass


def stream(seed: int, key) -> np.random.Generator:
    """Independent generator for (seed, key); worker w uses key (w,), w >= 1."""
    key = (key,) if isinstance(key, int) else tuple(key)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class RunConfig:
    problem: str = "tim"  # "tim", "maxcut", or an instance file path
    n: int = 20
    instance_seed: int = 0
    model: str = "made"
    hidden: int | None = None
    sampler: str = "auto"
    chains: int = 2
    burn_in: int | None = None
    thinning: int = 1
    mcmc_reburn: bool = False
    optimizer: str = "adam"
    lr: float | None = None
    sr_lambda: float = 1e-3
    sr_tol: float = 1e-6
    sr_maxiter: int = 200
    sr_fallback: bool = False
    fisher_centered: bool = True
    iterations: int = 300
    workers: int = 1
    mbs: int = 1024
    seed: int = 0
    eval_batch: int = 1024
    out_dir: str | None = None

    @property
    def batch_size(self) -> int:
        return self.workers * self.mbs

    @property
    def resolved_lr(self) -> float:
        return DEFAULT_LR[self.optimizer] if self.lr is None else self.lr

    def validate(self) -> None:
        if self.model not in PAIRING:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.sampler not in ("auto", "mcmc"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if PAIRING[self.model] != self.sampler:
            raise ConfigError(
                f"--sampler {self.sampler} cannot be used with --model {self.model} "
                f"(it pairs with {PAIRING[self.model]})"
            )
        if self.optimizer not in KINDS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.iterations < 1 or self.workers < 1:
            raise ConfigError("iterations and workers must be >= 1")
        if self.mbs < 2:
            raise ConfigError("mbs must be >= 2 (gradient centring needs two samples)")
        if self.sampler == "mcmc":
            if self.mbs % self.chains or self.eval_batch % self.chains:
                raise ConfigError(f"mbs and eval batch must be divisible by chains={self.chains}")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")

    def build_spec(self) -> ham.HamiltonianSpec:
        if self.problem == "tim":
            return ham.random_tim(self.n, self.instance_seed)
        if self.problem == "maxcut":
            return ham.maxcut_spec(ham.random_maxcut_graph(self.n, self.instance_seed))
        return ham.load_spec(self.problem)

    def build_model(self, n: int):
        rng = stream(self.seed, _INIT_KEY)
        if self.model == "made":
            return made_init(n, self.resolved_hidden(n), rng)
        return rbm_init(n, self.resolved_hidden(n), rng)

    def resolved_hidden(self, n: int) -> int:
        if self.hidden is not None:
            return self.hidden
        return default_made_hidden(n) if self.model == "made" else n

    def mcmc_config(self) -> McmcConfig:
        return McmcConfig(self.chains, self.burn_in, self.thinning, self.mcmc_reburn)

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(
            kind=self.optimizer, lr=self.resolved_lr, sr_lambda=self.sr_lambda,
            sr_tol=self.sr_tol, sr_maxiter=self.sr_maxiter, sr_fallback=self.sr_fallback,
        )


@dataclass
class RunResult:
    config: RunConfig
    stats: list[StepStats]
    final_energy: float | None = None
    final_energy_std: float | None = None
    best_cut: float | None = None
    mean_cut: float | None = None
    wall_time: float = 0.0
    phase_times: dict[str, float] = field(default_factory=dict)
    model: object = None
    gradients: list[np.ndarray] | None = None  # reduced gradient per iteration, if recorded


@dataclass
class _LocalResult:
    grad: np.ndarray
    local_energies: np.ndarray
    scores: np.ndarray | None
    sample_time: float
    estimate_time: float


class _Worker:
    def __init__(self, index: int, model, opt: OptimizerState, config: RunConfig, spec):
        self.index = index
        self.model = model
        self.opt = opt
        self.config = config
        self.spec = spec
        self.rng = stream(config.seed, index)
        self.chain: ChainState | None = None

    def sample(self, batch_size: int, rng=None, fresh_chain: bool = False) -> SampleBatch:
        rng = self.rng if rng is None else rng
        if self.config.sampler == "auto":
            return auto_sample(self.model, batch_size, rng)
        if fresh_chain:
            return mcmc_sample(self.model, batch_size, self.config.mcmc_config(), rng)[0]
        batch, self.chain = mcmc_sample(
            self.model, batch_size, self.config.mcmc_config(), rng, self.chain
        )
        return batch

    def local_step(self, with_scores: bool) -> _LocalResult:
        t0 = time.perf_counter()
        batch = self.sample(self.config.mbs)
        t1 = time.perf_counter()
        le = local_energy(self.spec, self.model, batch.configs, batch.log_psi)
        grad = gradient_estimate(self.spec, self.model, batch, local_energies=le)
        scores = score_vectors(self.model, batch) if with_scores else None
        return _LocalResult(grad, le, scores, t1 - t0, time.perf_counter() - t1)

    def apply(self, grad, fisher) -> None:
        self.opt, params = apply_update(self.opt, self.model.parameters(), grad, fisher)
        self.model.set_parameters(params)


def allreduce_mean(vectors) -> np.ndarray:
    """Mean of one vector per worker via a fixed pairwise tree.

    Level by level, slot 2k absorbs slot 2k+1 (an odd tail is carried up
    unchanged), then the root is divided by the worker count.
    """
    level = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not level:
        raise ValueError("nothing to reduce")
    count = len(level)
    while len(level) > 1:
        nxt = [level[k] + level[k + 1] for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0] / count


@contextlib.contextmanager
def _pool(workers: int):
    if workers == 1:
        yield None
        return
    from threadpoolctl import threadpool_limits

    # One BLAS thread per worker; the workers are the parallelism.
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=workers) as pool:
        yield pool


def _run_all(pool, fn, items):
    if pool is None:
        return [fn(item) for item in items]
    futures = [pool.submit(fn, item) for item in items]
    results, errors = [], []
    for w, fut in enumerate(futures):
        try:
            results.append(fut.result())
        except Exception as exc:  # noqa: BLE001 - re-raised with worker context
            errors.append((w, exc))
    if errors:
        w, exc = errors[0]
        raise WorkerError(f"worker {w + 1} failed: {exc!r}") from exc
    return results


def evaluate(spec, worker: _Worker, batch_size: int, rng) -> dict:
    """Energy (and cut, for graph instances) of a fresh batch from ``worker``'s model."""
    batch = worker.sample(batch_size, rng=rng, fresh_chain=True)
    le = local_energy(spec, worker.model, batch.configs, batch.log_psi)
    out = {"energy": float(le.mean()), "energy_std": float(le.std(ddof=1)) if len(le) > 1 else 0.0}
    if spec.num_edges is not None:
        cuts = ham.cut_value(spec, batch.configs)
        out["best_cut"] = float(cuts.max())
        out["mean_cut"] = float(cuts.mean())
    return out


def train(
    config: RunConfig,
    spec: ham.HamiltonianSpec | None = None,
    on_step: Callable[[int, object], bool] | None = None,
    evaluate_final: bool = True,
    check_replicas: bool = True,
    record_gradients: bool = False,
) -> RunResult:
    """Run ``config.iterations`` updates.

    ``on_step(iteration, model)`` runs after every update, outside the timed
    region; returning True stops training early.
    """
    config.validate()
    spec = config.build_spec() if spec is None else spec
    base = config.build_model(spec.n)
    if base.n != spec.n:
        raise ConfigError("model and instance sizes disagree")
    workers = [
        _Worker(w, base.copy(), config.optimizer_state(), config, spec)
        for w in range(1, config.workers + 1)
    ]
    with_scores = config.optimizer == "sgd_sr"
    phases = dict.fromkeys(("sample", "estimate", "reduce", "update"), 0.0)
    stats: list[StepStats] = []
    gradients = [] if record_gradients else None
    run_start = time.perf_counter()
    excluded = 0.0

    with _pool(config.workers) as pool:
        for it in range(1, config.iterations + 1):
            t0 = time.perf_counter()
            local = _run_all(pool, lambda w: w.local_step(with_scores), workers)
            t1 = time.perf_counter()
            grad = allreduce_mean([r.grad for r in local])
            if gradients is not None:
                gradients.append(grad)
            fisher = None
            if with_scores:
                scores = np.concatenate([r.scores for r in local])
                fisher = FisherOperator.from_scores(scores, centered=config.fisher_centered)
            t2 = time.perf_counter()
            _run_all(pool, lambda w: w.apply(grad, fisher), workers)
            t3 = time.perf_counter()

            if check_replicas and len(workers) > 1:
                ref = workers[0].model.parameters()
                for w in workers[1:]:
                    if not np.array_equal(ref, w.model.parameters()):
                        raise WorkerError(f"replica {w.index} diverged at iteration {it}")

            le = np.concatenate([r.local_energies for r in local])
            phases["sample"] += max(r.sample_time for r in local)
            phases["estimate"] += max(r.estimate_time for r in local)
            phases["reduce"] += t2 - t1
            phases["update"] += t3 - t2
            stats.append(StepStats(
                iteration=it,
                energy_mean=float(le.mean()),
                energy_std=float(le.std(ddof=1)),
                grad_norm=float(np.linalg.norm(grad)),
                wall_time=t3 - t0,
            ))
            if it == 1 or it % 50 == 0:
                log.info("iter %d energy %.6f std %.4f |g| %.3e", it,
                         stats[-1].energy_mean, stats[-1].energy_std, stats[-1].grad_norm)
            if on_step is not None:
                h0 = time.perf_counter()
                stop = on_step(it, workers[0].model)
                excluded += time.perf_counter() - h0
                if stop:
                    break

    result = RunResult(config, stats, phase_times=phases, model=workers[0].model,
                       gradients=gradients)
    result.wall_time = time.perf_counter() - run_start - excluded
    if evaluate_final:
        ev = evaluate(spec, workers[0], config.eval_batch, stream(config.seed, _EVAL_KEY))
        result.final_energy = ev["energy"]
        result.final_energy_std = ev["energy_std"]
        result.best_cut = ev.get("best_cut")
        result.mean_cut = ev.get("mean_cut")
    return result


@dataclass
class HittingTime:
    seconds: float | None  # None: target not reached within the iteration budget
    iterations: int


def hitting_time(config: RunConfig, target: float, spec=None) -> HittingTime:
    """Training time until a fresh evaluation batch passes ``target``.

    Graph instances compare the best cut in the batch (>= target); others
    the mean energy (<= target). Evaluation time is not counted.
    """
    spec = config.build_spec() if spec is None else spec
    rng = stream(config.seed, _EVAL_KEY)
    evaluator = _Worker(0, None, config.optimizer_state(), config, spec)
    reached = []

    def check(it, model):
        evaluator.model = model
        ev = evaluate(spec, evaluator, config.eval_batch, rng)
        hit = ev["best_cut"] >= target if spec.num_edges is not None else ev["energy"] <= target
        if hit:
            reached.append(it)
        return hit

    result = train(config, spec, on_step=check, evaluate_final=False)
    if not reached:
        return HittingTime(None, len(result.stats))
    return HittingTime(sum(s.wall_time for s in result.stats), reached[0])


def weak_scaling_benchmark(
    sizes,
    worker_counts=(1, 2, 4, 8),
    mbs: int = 4,
    iterations: int = 3,
    warmup: int = 1,
    seed: int = 0,
) -> list[dict]:
    """Per-iteration wall time of MADE+AUTO+ADAM on random TIM instances.

    ``normalized`` divides by the time of the largest worker count for the
    same n; weak scaling shows up as values near 1.
    """
    rows = []
    for n in sizes:
        spec = ham.random_tim(n, seed)
        per_n = []
        for L in worker_counts:
            cfg = RunConfig(problem="tim", n=n, model="made", sampler="auto", optimizer="adam",
                            iterations=warmup + iterations, workers=L, mbs=mbs, seed=seed)
            result = train(cfg, spec, evaluate_final=False)
            times = [s.wall_time for s in result.stats[warmup:]]
            per_n.append({"n": n, "workers": L, "mbs": mbs,
                          "seconds_per_iter": float(np.mean(times))})
        ref = per_n[-1]["seconds_per_iter"]
        for row in per_n:
            row["normalized"] = row["seconds_per_iter"] / ref
        rows += per_n
    return rows


def parallel_efficiency_model(k: int, j: int, n_samples: int, L: int) -> tuple[float, float, float]:
    """Speed-up of L thinned, burnt-in chains over one: returns (value, a, b), value = a + b L."""
    b = n_samples * j / (k + (n_samples - 1) * j + 1)
    a = 1.0 - b
    return a + b * L, a, b

