"""Parameter updates: SGD, ADAM and stochastic reconfiguration (SGD on the natural gradient)."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

log = logging.getLogger(__name__)

KINDS = ("sgd", "adam", "sgd_sr")
DEFAULT_LR = {"sgd": 0.1, "adam": 0.01, "sgd_sr": 0.1}
# Largest parameter count solved densely; above it SR uses CG.
DIRECT_SOLVE_MAX_DIM = 2000


class SRConvergenceError(RuntimeError):
    def __init__(self, residual: float, message: str | None = None):
        super().__init__(message or f"SR linear solve did not converge (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0
    sr_lambda: float = 1e-3
    sr_tol: float = 1e-6
    sr_maxiter: int = 200
    sr_fallback: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {KINDS}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.sr_lambda <= 0:
            raise ValueError("sr_lambda must be positive")


def make_optimizer(kind: str = "adam", lr: float | None = None, **kwargs) -> OptimizerState:
    if lr is None:
        lr = DEFAULT_LR.get(kind, 1.0)  # unknown kinds are rejected by OptimizerState
    return OptimizerState(kind=kind, lr=lr, **kwargs)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return params - lr * grad


def adam_step(state: OptimizerState, params, grad):
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return dataclasses.replace(state, m=m, v=v, t=t), new_params


def sr_direction(grad, fisher, lam: float, tol: float = 1e-6, maxiter: int = 200) -> np.ndarray:
    """Solve (F + lam I) delta = grad.

    ``fisher`` is an explicit matrix or anything with ``matvec``/``matrix``
    (see :class:`vqmc.estimator.FisherOperator`). Dense Cholesky for
    d <= DIRECT_SOLVE_MAX_DIM, otherwise CG from a zero start.
    """
    grad = np.asarray(grad, dtype=np.float64)
    d = len(grad)
    gnorm = np.linalg.norm(grad)
    if gnorm == 0.0:
        return np.zeros(d)
    explicit = isinstance(fisher, np.ndarray)
    matvec = (lambda v: fisher @ v) if explicit else fisher.matvec

    if d <= DIRECT_SOLVE_MAX_DIM:
        F = fisher if explicit else fisher.matrix()
        A = F + lam * np.eye(d)
        try:
            delta = scipy.linalg.solve(A, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            delta = scipy.linalg.solve(A, grad, assume_a="sym")
    else:
        op = LinearOperator((d, d), matvec=lambda v: matvec(v) + lam * v, dtype=np.float64)
        delta, _ = cg(op, grad, x0=np.zeros(d), rtol=tol, atol=0.0, maxiter=maxiter)

    residual = np.linalg.norm(matvec(delta) + lam * delta - grad) / gnorm
    if not residual <= tol:
        raise SRConvergenceError(float(residual))
    return delta


def sr_step(state: OptimizerState, params, grad, fisher) -> np.ndarray:
    try:
        delta = sr_direction(grad, fisher, state.sr_lambda, state.sr_tol, state.sr_maxiter)
    except SRConvergenceError as exc:
        if not state.sr_fallback:
            raise
        log.warning("%s; falling back to the raw gradient", exc)
        delta = grad
    return params - state.lr * delta


def apply_update(state: OptimizerState, params, grad, fisher=None):
    """Dispatch on ``state.kind``; returns (state', params')."""
    if state.kind == "sgd":
        return state, sgd_step(params, grad, state.lr)
    if state.kind == "adam":
        return adam_step(state, params, grad)
    if fisher is None:
        raise ValueError("sgd_sr needs a Fisher estimate")
    return state, sr_step(state, params, grad, fisher)
