"""Exact references for small instances.

Nothing here goes through ``sparse_row`` or the estimators, so these
functions can check them independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .hamiltonian import HamiltonianSpec, all_configs, config_index

MAX_DENSE_SITES = 14
MAX_ENUM_SITES = 16
MAX_MAXCUT_SITES = 24

_X = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
_Z = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


@dataclass(frozen=True)
class DenseOperator:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _site_operator(op, i: int, n: int):
    """I^(i) (x) op (x) I^(n-i-1) for 0-based site i."""
    return sp.kron(sp.kron(sp.identity(1 << i), op), sp.identity(1 << (n - i - 1)), format="csr")


def dense_matrix(spec: HamiltonianSpec) -> DenseOperator:
    n = spec.n
    if n > MAX_DENSE_SITES:
        raise ValueError(f"dense assembly limited to n <= {MAX_DENSE_SITES}")
    H = sp.csr_matrix((1 << n, 1 << n))
    Z = [_site_operator(_Z, i, n) for i in range(n)]
    for i in range(n):
        if spec.alpha[i]:
            H = H - spec.alpha[i] * _site_operator(_X, i, n)
        if spec.beta[i]:
            H = H - spec.beta[i] * Z[i]
    for i, j, value in spec.beta_pairs:
        H = H - value * (Z[i] @ Z[j])
    return DenseOperator(H.toarray())


def min_eigenpair(op) -> tuple[float, np.ndarray]:
    """Lowest eigenvalue and its eigenvector, signed so that sum(v) >= 0."""
    H = op.matrix if isinstance(op, DenseOperator) else np.asarray(op)
    w, V = scipy.linalg.eigh(H, subset_by_index=[0, 0])
    lam, v = float(w[0]), V[:, 0]
    if v.sum() < 0:
        v = -v
    scale = max(np.abs(H).sum(axis=1).max(), 1.0)
    residual = np.linalg.norm(H @ v - lam * v)
    if residual > 1e-9 * scale:
        raise RuntimeError(f"eigensolver residual {residual:.3e} exceeds tolerance")
    return lam, v


def ground_state(spec: HamiltonianSpec) -> tuple[float, np.ndarray]:
    return min_eigenpair(dense_matrix(spec))


def rayleigh_quotient(H, v) -> float:
    H = H.matrix if isinstance(H, DenseOperator) else H
    v = np.asarray(v, dtype=np.float64)
    return float(v @ H @ v / (v @ v))


def wavefunction_vector(model) -> np.ndarray:
    """Unnormalized psi over all configurations, scaled so max |psi| = 1."""
    lp = np.asarray(model.log_psi(all_configs(model.n)))
    return np.exp(lp - lp.max())


def exact_energy(spec: HamiltonianSpec, model, H=None) -> float:
    """Population objective <psi, H psi> / <psi, psi> by dense algebra."""
    H = dense_matrix(spec) if H is None else H
    return rayleigh_quotient(H, wavefunction_vector(model))


def enumerate_distribution(model) -> np.ndarray:
    """pi_theta(x) for every configuration, indexed by row index."""
    if model.n > MAX_ENUM_SITES:
        raise ValueError(f"enumeration limited to n <= {MAX_ENUM_SITES}")
    configs = all_configs(model.n)
    if model.kind == "made":
        return np.exp(model.log_prob(configs))
    if model.kind == "table":
        return model.amplitudes**2
    lp = 2.0 * np.asarray(model.log_psi(configs))
    p = np.exp(lp - lp.max())
    return p / p.sum()


def _cuts(adj: np.ndarray, configs: np.ndarray) -> np.ndarray:
    x = configs.astype(np.float64)
    ax = x @ adj
    return (ax.sum(axis=1) - np.einsum("bi,bi->b", ax, x)).round().astype(np.int64)


def brute_force_maxcut(adjacency, use_symmetry: bool = True) -> tuple[int, np.ndarray]:
    """Exhaustive maximum cut. With ``use_symmetry`` the last bit is pinned to 0."""
    adj = np.asarray(adjacency, dtype=np.float64)
    n = adj.shape[0]
    if n > MAX_MAXCUT_SITES:
        raise ValueError(f"brute force limited to n <= {MAX_MAXCUT_SITES}")
    if n == 0:
        return 0, np.zeros(0, dtype=np.int8)
    free = n - 1 if use_symmetry else n
    total = 1 << free
    shifts = np.arange(n - 1, -1, -1)
    best, best_x = -1, None
    step = 1 << 16
    for start in range(0, total, step):
        k = np.arange(start, min(total, start + step), dtype=np.int64)
        if use_symmetry:
            k = k << 1
        configs = ((k[:, None] >> shifts) & 1).astype(np.int8)
        cuts = _cuts(adj, configs)
        i = int(np.argmax(cuts))
        if cuts[i] > best:
            best, best_x = int(cuts[i]), configs[i]
    return best, best_x


def random_cut_baseline(adjacency, trials: int, rng: np.random.Generator) -> tuple[float, int]:
    """Mean and best cut over uniformly random 2-colourings."""
    adj = np.asarray(adjacency, dtype=np.float64)
    configs = rng.integers(0, 2, size=(trials, adj.shape[0]))
    cuts = _cuts(adj, configs)
    return float(cuts.mean()), int(cuts.max())


def empirical_distribution(configs) -> np.ndarray:
    configs = np.asarray(configs)
    counts = np.bincount(config_index(configs), minlength=1 << configs.shape[1])
    return counts / len(configs)


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def chisquare_test(counts, probs, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson goodness of fit; bins expecting fewer than ``min_expected`` are pooled.

    Returns (statistic, degrees of freedom, p-value).
    """
    from scipy.stats import chi2

    counts = np.asarray(counts, dtype=np.float64)
    expected = np.asarray(probs, dtype=np.float64) * counts.sum()
    small = expected < min_expected
    obs = counts[~small]
    exp = expected[~small]
    if small.any():
        obs = np.append(obs, counts[small].sum())
        exp = np.append(exp, expected[small].sum())
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return stat, dof, float(chi2.sf(stat, dof))
