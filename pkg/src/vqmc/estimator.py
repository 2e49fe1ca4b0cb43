"""Monte Carlo estimators of the energy, its variance, the gradient and the Fisher matrix.

Every estimator takes either a :class:`~vqmc.sampler.SampleBatch` or a raw
configuration array. Passing ``weights`` (non-negative, summing to one)
switches from the sample mean to a weighted population average, which is
how the exhaustive-enumeration checks drive these functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import HamiltonianSpec, diagonal_energy
from .sampler import SampleBatch

# Exponent above which local energies are accumulated with a max shift.
_SHIFT_THRESHOLD = 50.0


class NumericalError(FloatingPointError):
    """Non-finite energy or gradient, usually amplitude underflow."""


@dataclass
class StepStats:
    iteration: int
    energy_mean: float
    energy_std: float
    grad_norm: float
    wall_time: float
    local_energies: np.ndarray | None = None


def _unpack(model, batch):
    if isinstance(batch, SampleBatch):
        return batch.configs, batch.log_psi
    configs = np.atleast_2d(np.asarray(batch))
    return configs, None


def local_energy(spec: HamiltonianSpec, model, configs, log_psi=None):
    """(H psi)(x) / psi(x) for one configuration or a batch.

    All single-flip neighbours of the batch go through one call to
    ``model.flip_log_psi``.
    """
    x = np.asarray(configs)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != spec.n or model.n != spec.n:
        raise ValueError("configuration, model and Hamiltonian sizes disagree")
    energy = np.atleast_1d(diagonal_energy(spec, xb)).astype(np.float64)
    sites = spec.flip_sites
    if len(sites):
        lp = np.atleast_1d(model.log_psi(xb) if log_psi is None else log_psi)
        ratio = model.flip_log_psi(xb, sites) - lp[:, None]
        weights = -spec.alpha[sites]
        with np.errstate(over="ignore"):  # overflow is reported below
            if ratio.max() > _SHIFT_THRESHOLD:
                shift = ratio.max(axis=1, keepdims=True)
                energy += np.exp(shift[:, 0]) * (np.exp(ratio - shift) @ weights)
            else:
                energy += np.exp(ratio) @ weights
    if not np.all(np.isfinite(energy)):
        raise NumericalError("non-finite local energy (amplitude underflow?)")
    return float(energy[0]) if single else energy


def energy_and_variance(spec, model, batch, weights=None, local_energies=None):
    """Return (mean, variance) of the local energy.

    Sample mode uses the unbiased variance; weighted mode the exact weighted
    population variance.
    """
    configs, lp = _unpack(model, batch)
    le = local_energy(spec, model, configs, lp) if local_energies is None else local_energies
    if weights is None:
        if len(le) < 2:
            raise ValueError("need at least two samples for a variance")
        return float(np.mean(le)), float(np.var(le, ddof=1))
    w = np.asarray(weights, dtype=np.float64)
    mean = float(w @ le)
    return mean, float(w @ (le - mean) ** 2)


def gradient_estimate(spec, model, batch, weights=None, local_energies=None) -> np.ndarray:
    """2 Cov(l(x), grad log psi(x)).

    Sample mode centres on the in-batch energy and divides by B - 1, which
    keeps the estimate unbiased for any batch size. Weighted mode is the
    exact population covariance.
    """
    configs, lp = _unpack(model, batch)
    if weights is None and len(configs) < 2:
        raise ValueError("need at least two samples for a gradient")
    le = local_energy(spec, model, configs, lp) if local_energies is None else local_energies
    if weights is None:
        coeff = 2.0 * (le - le.mean()) / (len(le) - 1)
    else:
        w = np.asarray(weights, dtype=np.float64)
        coeff = 2.0 * w * (le - w @ le)
    grad = model.grad_log_psi(configs, weights=coeff)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient")
    return grad


class FisherOperator:
    """F = R^T R, held through the (scaled, optionally centred) score rows R."""

    def __init__(self, rows: np.ndarray):
        self.rows = rows

    @classmethod
    def from_scores(cls, scores: np.ndarray, centered: bool = True, weights=None):
        scores = np.asarray(scores, dtype=np.float64)
        if weights is None:
            if len(scores) < 2:
                raise ValueError("need at least two samples for a Fisher estimate")
            w = np.full(len(scores), 1.0 / len(scores))
        else:
            w = np.asarray(weights, dtype=np.float64)
        if centered:
            scores = scores - w @ scores
        return cls(np.sqrt(w)[:, None] * scores)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.rows.T @ (self.rows @ v)

    def matrix(self) -> np.ndarray:
        return self.rows.T @ self.rows


def score_vectors(model, batch) -> np.ndarray:
    """Per-sample grad log pi = 2 grad log psi, shape (B, d)."""
    configs, _ = _unpack(model, batch)
    return 2.0 * model.grad_log_psi(configs)


def fisher_estimate(model, batch, centered: bool = True, weights=None) -> FisherOperator:
    """Empirical Fisher information of pi_theta from per-sample scores."""
    return FisherOperator.from_scores(score_vectors(model, batch), centered, weights)
