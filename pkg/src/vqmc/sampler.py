"""Configuration samplers: exact ancestral (AUTO) and Metropolis-Hastings (MCMC)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .models import LOGIT_CLAMP, MadeModel


@dataclass
class SampleBatch:
    configs: np.ndarray
    log_psi: np.ndarray
    kind: str
    acceptance_rate: float | None = None
    wall_time: float = 0.0

    def __len__(self):
        return len(self.configs)


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 2
    burn_in: int | None = None  # None -> 3n + 100
    thinning: int = 1
    reburn: bool = False  # burn in again on every call

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")

    def resolved_burn_in(self, n: int) -> int:
        return default_burn_in(n) if self.burn_in is None else self.burn_in


@dataclass
class ChainState:
    """Current position of every chain; carried between training iterations."""

    configs: np.ndarray


def default_burn_in(n: int) -> int:
    return 3 * n + 100


def auto_sample(model: MadeModel, batch_size: int, rng: np.random.Generator) -> SampleBatch:
    """Draw exact samples bit by bit; one batched forward pass per site.

    The first-layer pre-activation is accumulated as bits are fixed, so pass
    i only evaluates output i -- the other outputs of a full pass are unused.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    start = time.perf_counter()
    n = model.n
    W1m, W2m = model.masked_weights
    configs = np.zeros((batch_size, n), dtype=np.int8)
    pre = np.tile(model.b1, (batch_size, 1))
    log_prob = np.zeros(batch_size)
    for i in range(n):
        z = np.clip(np.maximum(pre, 0.0) @ W2m[i] + model.b2[i], -LOGIT_CLAMP, LOGIT_CLAMP)
        bit = rng.random(batch_size) < expit(z)
        configs[:, i] = bit
        log_prob -= np.log1p(np.exp(np.where(bit, -z, z)))
        pre += bit[:, None] * W1m[:, i]
    return SampleBatch(configs, 0.5 * log_prob, "auto", wall_time=time.perf_counter() - start)


def mcmc_sample(
    model,
    batch_size: int,
    cfg: McmcConfig,
    rng: np.random.Generator,
    state: ChainState | None = None,
) -> tuple[SampleBatch, ChainState]:
    """Single-site-flip random-walk Metropolis with ``cfg.chains`` chains.

    Burn-in runs when no state is given (or ``cfg.reburn``); afterwards each
    chain keeps every ``thinning``-th state until it holds batch_size/chains
    samples. Samples are ordered step-major: row ``t * chains + c``.
    """
    c = cfg.chains
    if batch_size % c:
        raise ValueError(f"batch_size {batch_size} is not divisible by chains={c}")
    start = time.perf_counter()
    n = model.n
    per_chain = batch_size // c
    burn = cfg.resolved_burn_in(n) if (state is None or cfg.reburn) else 0
    if state is None or cfg.reburn:
        x = rng.integers(0, 2, size=(c, n)).astype(np.int8)
    else:
        x = state.configs.copy()
    lp = np.asarray(model.log_psi(x), dtype=np.float64)

    total = burn + per_chain * cfg.thinning
    sites = rng.integers(0, n, size=(total, c))
    log_u = np.log(rng.random((total, c)))
    rows = np.arange(c)
    accepted = 0

    configs = np.empty((per_chain, c, n), dtype=np.int8)
    log_psi = np.empty((per_chain, c))
    kept = 0
    for step in range(total):
        proposal = x.copy()
        proposal[rows, sites[step]] ^= 1
        lp_new = model.log_psi(proposal)
        accept = log_u[step] < 2.0 * (lp_new - lp)
        x[accept] = proposal[accept]
        lp[accept] = lp_new[accept]
        accepted += int(accept.sum())
        if step >= burn and (step - burn + 1) % cfg.thinning == 0:
            configs[kept] = x
            log_psi[kept] = lp
            kept += 1

    batch = SampleBatch(
        configs.reshape(batch_size, n),
        log_psi.reshape(batch_size),
        "mcmc",
        acceptance_rate=accepted / (total * c) if total else 1.0,
        wall_time=time.perf_counter() - start,
    )
    return batch, ChainState(x)


def forward_pass_count(kind: str, n: int, batch_size: int, cfg: McmcConfig | None = None) -> int:
    """Sequential forward passes needed to produce one batch (per chain for MCMC)."""
    if kind == "auto":
        return n
    if kind == "mcmc":
        cfg = cfg or McmcConfig()
        return cfg.resolved_burn_in(n) + (batch_size // cfg.chains) * cfg.thinning
    raise ValueError(f"unknown sampler kind {kind!r}")
