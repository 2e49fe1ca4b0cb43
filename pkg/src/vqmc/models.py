"""Trial wavefunctions.

Three models share one duck-typed surface (``log_psi``, ``grad_log_psi``,
``flip_log_psi``, ``parameters``/``set_parameters``, ``copy``):

* :class:`MadeModel` -- masked two-layer autoencoder, normalized by
  construction, ``psi = sqrt(pi)``.
* :class:`RbmModel` -- ``log psi = sum_k lncosh((W x + c)_k) + a.x``,
  unnormalized.
* :class:`TableWavefunction` -- explicit amplitude vector, for tests.

Configurations are fed to the networks as raw {0, 1} bits.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .hamiltonian import config_index

PROB_EPS = 1e-7
# Conditionals are clamped to [eps, 1 - eps] by clamping their logits.
LOGIT_CLAMP = math.log((1.0 - PROB_EPS) / PROB_EPS)
LOG_FLOOR = -700.0
# Upper bound on elements materialized per chunk in flip_log_psi.
_CHUNK_ELEMENTS = 1 << 22
_FLIP_BLOCKS = 8


class ModelFormatError(ValueError):
    pass


def default_made_hidden(n: int) -> int:
    return max(1, int(round(5.0 * math.log(n) ** 2)))


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    return np.atleast_2d(x).astype(np.float64), single


def lncosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def _neighbor_configs(x: np.ndarray, sites: np.ndarray) -> np.ndarray:
    """(B, k, n) array: row b, slot j is x[b] with bit sites[j] flipped."""
    nb = np.repeat(x[:, None, :], len(sites), axis=1)
    nb[:, np.arange(len(sites)), sites] = 1.0 - nb[:, np.arange(len(sites)), sites]
    return nb


def _chunks(batch: int, per_row: int):
    step = max(1, _CHUNK_ELEMENTS // max(per_row, 1))
    for start in range(0, batch, step):
        yield slice(start, min(batch, start + step))


@dataclass(eq=False)
class MadeModel:
    n: int
    h: int
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    degrees: np.ndarray
    M1: np.ndarray = None
    M2: np.ndarray = None
    kind = "made"

    def __post_init__(self):
        self.degrees = np.asarray(self.degrees, dtype=np.int64)
        if self.M1 is None or self.M2 is None:
            self.M1, self.M2 = made_masks(self.n, self.degrees)

    @property
    def num_parameters(self) -> int:
        return 2 * self.h * self.n + self.h + self.n

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def set_parameters(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_parameters,):
            raise ValueError(f"expected {self.num_parameters} parameters, got {theta.shape}")
        hn = self.h * self.n
        self.W1 = theta[:hn].reshape(self.h, self.n).copy()
        self.b1 = theta[hn : hn + self.h].copy()
        self.W2 = theta[hn + self.h : 2 * hn + self.h].reshape(self.n, self.h).copy()
        self.b2 = theta[2 * hn + self.h :].copy()

    def copy(self) -> MadeModel:
        return MadeModel(
            self.n, self.h, self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
            self.degrees.copy(), self.M1.copy(), self.M2.copy(),
        )

    @property
    def masked_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.M1 * self.W1, self.M2 * self.W2

    def _forward(self, x: np.ndarray):
        """Returns (first-layer pre-activation, hidden, clamped logits, active mask)."""
        W1m, W2m = self.masked_weights
        pre = x @ W1m.T + self.b1
        hidden = np.maximum(pre, 0.0)
        z = hidden @ W2m.T + self.b2
        active = np.abs(z) < LOGIT_CLAMP
        np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP, out=z)
        return pre, hidden, z, active

    def conditionals(self, x) -> np.ndarray:
        """p(x_i = 1 | x_<i) for every i, clamped to [eps, 1 - eps]."""
        xb, single = _as_batch(x)
        self._check(xb)
        p = expit(self._forward(xb)[2])
        return p[0] if single else p

    def log_prob(self, x):
        xb, single = _as_batch(x)
        self._check(xb)
        lp = _log_sigmoid(_signed(xb, self._forward(xb)[2])).sum(axis=1)
        return float(lp[0]) if single else lp

    def log_psi(self, x):
        return 0.5 * self.log_prob(x)

    def grad_log_psi(self, x, weights=None) -> np.ndarray:
        """Per-sample gradients (B, d), or ``sum_b weights[b] * grad_b`` if given."""
        xb, single = _as_batch(x)
        self._check(xb)
        W1m, W2m = self.masked_weights
        pre, hidden, z, active = self._forward(xb)
        dz = 0.5 * (xb - expit(z)) * active
        dpre = (dz @ W2m) * (pre > 0)
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            dz_w, dpre_w = dz * w[:, None], dpre * w[:, None]
            return np.concatenate([
                ((dpre_w.T @ xb) * self.M1).ravel(),
                dpre_w.sum(axis=0),
                ((dz_w.T @ hidden) * self.M2).ravel(),
                dz_w.sum(axis=0),
            ])
        B = len(xb)
        g = np.concatenate([
            (dpre[:, :, None] * xb[:, None, :] * self.M1).reshape(B, -1),
            dpre,
            (dz[:, :, None] * hidden[:, None, :] * self.M2).reshape(B, -1),
            dz,
        ], axis=1)
        return g[0] if single else g

    def flip_log_psi(self, x, sites) -> np.ndarray:
        """log psi of every single-flip neighbour: result[b, j] flips sites[j].

        Flipping bit j leaves the conditionals of bits before j untouched and
        only moves hidden units of degree > j, so sites are processed in
        blocks that each touch a trailing slice of outputs and hidden units.
        """
        xb, _ = _as_batch(x)
        sites = np.asarray(sites, dtype=np.int64)
        W1m, W2m = self.masked_weights
        pre = xb @ W1m.T + self.b1
        hidden = np.maximum(pre, 0.0)
        z = hidden @ W2m.T + self.b2  # unclamped; neighbours shift it first
        base = _log_sigmoid(_signed(xb, np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)))
        # tail[b, s] = sum of base[b, s:]
        tail = np.cumsum(base[:, ::-1], axis=1)[:, ::-1]
        out = np.empty((len(xb), len(sites)))
        order = np.argsort(sites, kind="stable")
        for blk in np.array_split(order, min(len(sites), _FLIP_BLOCKS)):
            if len(blk) == 0:
                continue
            s_blk = sites[blk]
            s0 = int(s_blk.min())
            units = self.degrees > s0
            cols = W1m[units][:, s_blk].T  # (kb, u)
            W2t = W2m[s0:][:, units].T  # (u, n - s0)
            local = s_blk - s0
            kb = len(blk)
            for sl in _chunks(len(xb), kb * max(int(units.sum()), self.n - s0, 1)):
                x_sl = xb[sl]
                delta = 1.0 - 2.0 * x_sl[:, s_blk]
                pre_nb = pre[sl][:, None, units] + delta[:, :, None] * cols[None]
                np.maximum(pre_nb, 0.0, out=pre_nb)
                pre_nb -= hidden[sl][:, None, units]
                z_nb = pre_nb @ W2t
                z_nb += z[sl][:, None, s0:]
                np.clip(z_nb, -LOGIT_CLAMP, LOGIT_CLAMP, out=z_nb)
                sign = np.repeat((2.0 * x_sl[:, None, s0:] - 1.0), kb, axis=1)
                sign[:, np.arange(kb), local] *= -1.0
                z_nb *= sign
                lp = _log_sigmoid(z_nb, out=z_nb).sum(axis=2)
                out[sl, blk] = 0.5 * (tail[sl, :1] - tail[sl, s0:s0 + 1] + lp)
        return out

    def _check(self, xb):
        if xb.shape[-1] != self.n:
            raise ValueError(f"configuration length {xb.shape[-1]} != n={self.n}")


def _signed(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """(2x - 1) z, so that log p(x_i) = log sigmoid of it."""
    return np.where(x > 0.5, z, -z)


def _log_sigmoid(t: np.ndarray, out=None) -> np.ndarray:
    # arguments are clamped logits, so exp(-t) cannot overflow
    out = np.negative(t, out=out)
    np.exp(out, out=out)
    np.log1p(out, out=out)
    return np.negative(out, out=out)


def made_masks(n: int, degrees: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """M1[k, j] = [j+1 <= deg_k];  M2[i, k] = [deg_k < i+1]  (0-based i, j)."""
    idx = np.arange(1, n + 1)
    M1 = (idx[None, :] <= degrees[:, None]).astype(np.float64)
    M2 = (degrees[None, :] < idx[:, None]).astype(np.float64)
    return M1, M2


def made_init(n: int, h: int | None = None, seed=0) -> MadeModel:
    """Cyclic degrees 1..n-1, uniform 1/sqrt(fan_in) weights, zero biases."""
    if n < 2:
        raise ValueError("MADE needs n >= 2 (no valid hidden degrees for n = 1)")
    h = default_made_hidden(n) if h is None else int(h)
    if h < 1:
        raise ValueError("hidden width must be >= 1")
    rng = np.random.default_rng(seed)
    degrees = 1 + np.arange(h) % (n - 1)
    W1 = rng.uniform(-1.0, 1.0, size=(h, n)) / math.sqrt(n)
    W2 = rng.uniform(-1.0, 1.0, size=(n, h)) / math.sqrt(h)
    return MadeModel(n, h, W1, np.zeros(h), W2, np.zeros(n), degrees)


@dataclass(eq=False)
class RbmModel:
    n: int
    h: int
    W: np.ndarray
    c: np.ndarray
    a: np.ndarray
    kind = "rbm"

    @property
    def num_parameters(self) -> int:
        return self.h * self.n + self.h + self.n

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.c, self.a])

    def set_parameters(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_parameters,):
            raise ValueError(f"expected {self.num_parameters} parameters, got {theta.shape}")
        hn = self.h * self.n
        self.W = theta[:hn].reshape(self.h, self.n).copy()
        self.c = theta[hn : hn + self.h].copy()
        self.a = theta[hn + self.h :].copy()

    def copy(self) -> RbmModel:
        return RbmModel(self.n, self.h, self.W.copy(), self.c.copy(), self.a.copy())

    def log_psi(self, x):
        xb, single = _as_batch(x)
        out = lncosh(xb @ self.W.T + self.c).sum(axis=1) + xb @ self.a
        return float(out[0]) if single else out

    def grad_log_psi(self, x, weights=None) -> np.ndarray:
        xb, single = _as_batch(x)
        t = np.tanh(xb @ self.W.T + self.c)
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            tw = t * w[:, None]
            return np.concatenate([(tw.T @ xb).ravel(), tw.sum(axis=0), w @ xb])
        B = len(xb)
        g = np.concatenate([(t[:, :, None] * xb[:, None, :]).reshape(B, -1), t, xb], axis=1)
        return g[0] if single else g

    def flip_log_psi(self, x, sites) -> np.ndarray:
        xb, _ = _as_batch(x)
        sites = np.asarray(sites, dtype=np.int64)
        theta = xb @ self.W.T + self.c
        base = xb @ self.a
        delta = 1.0 - 2.0 * xb[:, sites]
        cols = self.W.T[sites]
        out = np.empty((len(xb), len(sites)))
        for sl in _chunks(len(xb), len(sites) * self.h):
            th = theta[sl, None, :] + delta[sl, :, None] * cols[None, :, :]
            out[sl] = lncosh(th).sum(axis=2) + base[sl, None] + delta[sl] * self.a[sites]
        return out


def rbm_init(n: int, h: int | None = None, seed=0, scale: float | None = None) -> RbmModel:
    """Weights uniform in +-scale (default 1/sqrt(n)), zero biases."""
    h = n if h is None else int(h)
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(n) if scale is None else scale
    W = rng.uniform(-scale, scale, size=(h, n))
    return RbmModel(n, h, W, np.zeros(h), np.zeros(n))


@dataclass(eq=False)
class TableWavefunction:
    n: int
    amplitudes: np.ndarray
    kind = "table"
    num_parameters = 0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        if amps.shape != (1 << self.n,):
            raise ValueError("need 2^n amplitudes")
        if np.any(amps < 0):
            raise ValueError("amplitudes must be non-negative")
        norm = np.linalg.norm(amps)
        if not np.isclose(norm, 1.0, rtol=0, atol=1e-10):
            raise ValueError(f"amplitudes must have unit norm, got {norm}")
        self.amplitudes = amps

    def parameters(self) -> np.ndarray:
        return np.zeros(0)

    def set_parameters(self, theta) -> None:
        if np.size(theta):
            raise ValueError("table wavefunction has no trainable parameters")

    def copy(self) -> TableWavefunction:
        return TableWavefunction(self.n, self.amplitudes.copy())

    def log_psi(self, x):
        x = np.asarray(x)
        with np.errstate(divide="ignore"):
            out = np.maximum(np.log(self.amplitudes[config_index(x)]), LOG_FLOOR)
        return float(out) if x.ndim == 1 else out

    def grad_log_psi(self, x, weights=None) -> np.ndarray:
        if weights is not None:
            return np.zeros(0)
        return np.zeros((len(np.atleast_2d(x)), 0))

    def flip_log_psi(self, x, sites) -> np.ndarray:
        xb = np.atleast_2d(np.asarray(x, dtype=np.int64))
        nb = _neighbor_configs(xb, np.asarray(sites, dtype=np.int64))
        return self.log_psi(nb.reshape(-1, self.n)).reshape(nb.shape[:2])


def check_autoregressive(model: MadeModel, configs=None) -> list[tuple[int, int]]:
    """Return (output i, input j) pairs, j >= i, where output i reacts to input j.

    An empty list means the autoregressive property holds on ``configs``
    (default: all configurations for n <= 10, else 256 random ones).
    """
    n = model.n
    if configs is None:
        if n <= 10:
            from .hamiltonian import all_configs
            configs = all_configs(n)
        else:
            configs = np.random.default_rng(0).integers(0, 2, size=(256, n))
    x = np.asarray(configs, dtype=np.float64)
    base = model._forward(x)[2]
    bad = []
    for j in range(n):
        flipped = x.copy()
        flipped[:, j] = 1.0 - flipped[:, j]
        changed = np.any(model._forward(flipped)[2] != base, axis=0)
        bad += [(i, j) for i in range(j + 1) if changed[i]]
    return bad


# -- checkpoints -------------------------------------------------------------

_MAGIC = "vqmc-model 1"


def save_model(model, path: str | os.PathLike) -> None:
    if model.kind not in ("made", "rbm"):
        raise TypeError(f"cannot checkpoint a {model.kind} model")
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"kind {model.kind} n {model.n} h {model.h} d {model.num_parameters}\n")
        if model.kind == "made":
            fh.write("degrees " + " ".join(map(str, model.degrees.tolist())) + "\n")
        fh.write("\n".join(repr(v) for v in model.parameters().tolist()) + "\n")


def load_model(path: str | os.PathLike):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _MAGIC:
        raise ModelFormatError("missing or unsupported checkpoint header")
    try:
        _, kind, _, n, _, h, _, d = lines[1].split()
        n, h, d = int(n), int(h), int(d)
    except ValueError:
        raise ModelFormatError(f"bad descriptor line {lines[1]!r}") from None
    body = lines[2:]
    if kind == "made":
        if not body or not body[0].startswith("degrees "):
            raise ModelFormatError("MADE checkpoint lacks a degrees line")
        degrees = np.array([int(t) for t in body[0].split()[1:]])
        if len(degrees) != h:
            raise ModelFormatError("degree count does not match h")
        model = made_init(n, h, 0)
        model.degrees = degrees
        model.M1, model.M2 = made_masks(n, degrees)
        body = body[1:]
    elif kind == "rbm":
        model = rbm_init(n, h, 0)
    else:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    if d != model.num_parameters or len(body) != d:
        raise ModelFormatError(
            f"parameter count mismatch: header d={d}, file has {len(body)}, "
            f"{kind}(n={n}, h={h}) needs {model.num_parameters}"
        )
    model.set_parameters(np.array([float(v) for v in body]))
    return model
