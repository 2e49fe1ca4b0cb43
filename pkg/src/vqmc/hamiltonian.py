"""Transverse-field Ising Hamiltonians and their Max-Cut special case.

The Hamiltonian is

    H = -sum_i (alpha_i X_i + beta_i Z_i) - sum_{i<j} beta_ij Z_i Z_j

and is never stored as a matrix. Configurations are bit vectors ``x`` in
{0, 1}^n with ``x[0]`` the most significant bit of the row index; the spin
value of site i is ``s_i = 1 - 2 x_i``.

Indices are 0-based in Python and 1-based in instance files.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class InstanceFormatError(ValueError):
    """Raised for malformed instance files or inconsistent coefficients."""


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    n: int
    alpha: np.ndarray
    beta: np.ndarray
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    couplings: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # Set by maxcut_spec; enables cut <-> energy conversion.
    num_edges: int | None = None

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError("n must be >= 1")
        alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        couplings = np.array(self.couplings, dtype=np.float64).reshape(-1)
        if alpha.shape != (n,) or beta.shape != (n,):
            raise ValueError(f"alpha and beta must have length n={n}")
        if len(pairs) != len(couplings):
            raise ValueError("pairs and couplings differ in length")
        if np.any(alpha < 0):
            raise ValueError("transverse coefficients alpha must be non-negative")
        if len(pairs):
            if np.any(pairs[:, 0] >= pairs[:, 1]):
                raise ValueError("pair indices must satisfy i < j")
            if np.any(pairs < 0) or np.any(pairs >= n):
                raise ValueError(f"pair index out of range for n={n}")
            keys = pairs[:, 0] * n + pairs[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate (i, j) pair")
        for arr in (alpha, beta, pairs, couplings):
            arr.flags.writeable = False
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "couplings", couplings)

    def __eq__(self, other):
        if not isinstance(other, HamiltonianSpec):
            return NotImplemented
        return (
            self.n == other.n
            and self.num_edges == other.num_edges
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.couplings, other.couplings)
        )

    __hash__ = None

    @property
    def beta_pairs(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for (i, j), v in zip(self.pairs, self.couplings)]

    @property
    def flip_sites(self) -> np.ndarray:
        """Sites carrying a transverse term, i.e. the off-diagonal structure."""
        return np.flatnonzero(self.alpha > 0)

    @functools.cached_property
    def _coupling_matrix(self) -> sp.csr_matrix:
        i, j = self.pairs.T if len(self.pairs) else (np.zeros(0, int), np.zeros(0, int))
        return sp.csr_matrix((self.couplings, (i, j)), shape=(self.n, self.n))


@dataclass(frozen=True)
class SparseRow:
    """Nonzero entries of one row: ``columns[k]`` holds the column config."""

    columns: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return zip(map(tuple, self.columns.tolist()), self.values.tolist())


def _check_configs(spec: HamiltonianSpec, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != spec.n:
        raise ValueError(f"configuration length {x.shape[-1]} != n={spec.n}")
    return x


def diagonal_energy(spec: HamiltonianSpec, x) -> np.ndarray | float:
    """H_xx for a single configuration or a batch (last axis is the site)."""
    x = _check_configs(spec, x)
    s = 1.0 - 2.0 * np.atleast_2d(x).astype(np.float64)
    energy = -(s @ spec.beta)
    if len(spec.pairs):
        energy -= np.einsum("bi,bi->b", np.asarray(spec._coupling_matrix @ s.T).T, s)
    return float(energy[0]) if x.ndim == 1 else energy


def sparse_row(spec: HamiltonianSpec, x) -> SparseRow:
    """Off-diagonal single flips first (ascending site), then the diagonal."""
    x = _check_configs(spec, x)
    if x.ndim != 1:
        raise ValueError("sparse_row takes a single configuration")
    sites = spec.flip_sites
    columns = np.repeat(x[None, :].astype(np.int8), len(sites) + 1, axis=0)
    columns[np.arange(len(sites)), sites] ^= 1
    values = np.empty(len(sites) + 1)
    values[:-1] = -spec.alpha[sites]
    values[-1] = diagonal_energy(spec, x)
    return SparseRow(columns, values)


def maxcut_spec(adjacency) -> HamiltonianSpec:
    """Ising form of Max-Cut: minimizing H maximizes the cut.

    Uses beta_ij = -1/4 per edge so that ``cut(x) = |E|/2 - 2 H_xx``.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if not np.all((adj == 0) | (adj == 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    n = adj.shape[0]
    i, j = np.nonzero(np.triu(adj, k=1))
    return HamiltonianSpec(
        n=n,
        alpha=np.zeros(n),
        beta=np.zeros(n),
        pairs=np.stack([i, j], axis=1),
        couplings=np.full(len(i), -0.25),
        num_edges=len(i),
    )


def cut_value(spec: HamiltonianSpec, x):
    """Cut size of configuration(s) ``x`` for a spec built by maxcut_spec."""
    if spec.num_edges is None:
        raise ValueError("spec was not built from a graph")
    return spec.num_edges / 2.0 - 2.0 * diagonal_energy(spec, x)


def adjacency_of(spec: HamiltonianSpec) -> np.ndarray:
    if spec.num_edges is None:
        raise ValueError("spec was not built from a graph")
    adj = np.zeros((spec.n, spec.n), dtype=np.int8)
    adj[spec.pairs[:, 0], spec.pairs[:, 1]] = 1
    return adj | adj.T


def random_tim(n: int, seed: int) -> HamiltonianSpec:
    """Disordered, fully connected instance: alpha ~ U(0,1), betas ~ U(-1,1)."""
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.0, 1.0, size=n)
    beta = rng.uniform(-1.0, 1.0, size=n)
    i, j = np.triu_indices(n, k=1)
    couplings = rng.uniform(-1.0, 1.0, size=len(i))
    return HamiltonianSpec(n, alpha, beta, np.stack([i, j], axis=1), couplings)


def random_maxcut_graph(n: int, seed: int) -> np.ndarray:
    """Round (B + B^T)/2 half-up with B_ij ~ Bernoulli(1/2); zero diagonal."""
    rng = np.random.default_rng(seed)
    b = rng.integers(0, 2, size=(n, n))
    adj = np.floor((b + b.T) / 2.0 + 0.5).astype(np.int8)
    np.fill_diagonal(adj, 0)
    return adj


# -- instance files ---------------------------------------------------------


def _is_graph_spec(spec: HamiltonianSpec) -> bool:
    return (
        spec.num_edges is not None
        and not spec.alpha.any()
        and not spec.beta.any()
        and bool(np.all(spec.couplings == -0.25))
    )


def format_spec(spec: HamiltonianSpec) -> str:
    if _is_graph_spec(spec):
        lines = [f"graph {spec.n}"]
        lines += [f"edge {i + 1} {j + 1}" for i, j in spec.pairs.tolist()]
        return "\n".join(lines) + "\n"
    lines = [f"tim {spec.n}"]
    lines += [f"alpha {i + 1} {v!r}" for i, v in enumerate(spec.alpha.tolist()) if v != 0]
    lines += [f"beta {i + 1} {v!r}" for i, v in enumerate(spec.beta.tolist()) if v != 0]
    lines += [f"pair {i + 1} {j + 1} {v!r}" for i, j, v in spec.beta_pairs]
    return "\n".join(lines) + "\n"


def parse_spec(lines: Iterable[str]) -> HamiltonianSpec:
    header = None
    body = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            if len(tokens) != 2 or tokens[0] not in ("tim", "graph"):
                raise InstanceFormatError(f"line {lineno}: expected 'tim <n>' or 'graph <n>'")
            try:
                n = int(tokens[1])
            except ValueError:
                raise InstanceFormatError(f"line {lineno}: bad size {tokens[1]!r}") from None
            if n < 1:
                raise InstanceFormatError(f"line {lineno}: n must be >= 1")
            header = tokens[0]
            continue
        body.append((lineno, tokens))
    if header is None:
        raise InstanceFormatError("empty instance file")

    def index(lineno, tok):
        try:
            i = int(tok)
        except ValueError:
            raise InstanceFormatError(f"line {lineno}: bad index {tok!r}") from None
        if not 1 <= i <= n:
            raise InstanceFormatError(f"line {lineno}: index {i} outside 1..{n}")
        return i - 1

    def value(lineno, tok):
        try:
            return float(tok)
        except ValueError:
            raise InstanceFormatError(f"line {lineno}: bad value {tok!r}") from None

    if header == "graph":
        adj = np.zeros((n, n), dtype=np.int8)
        for lineno, tokens in body:
            if tokens[0] != "edge" or len(tokens) != 3:
                raise InstanceFormatError(f"line {lineno}: expected 'edge i j'")
            i, j = index(lineno, tokens[1]), index(lineno, tokens[2])
            if i >= j:
                raise InstanceFormatError(f"line {lineno}: edge indices must satisfy i < j")
            if adj[i, j]:
                raise InstanceFormatError(f"line {lineno}: duplicate edge ({i + 1}, {j + 1})")
            adj[i, j] = adj[j, i] = 1
        return maxcut_spec(adj)

    alpha, beta = np.zeros(n), np.zeros(n)
    pairs, couplings, seen = [], [], set()
    for lineno, tokens in body:
        kind = tokens[0]
        if kind in ("alpha", "beta") and len(tokens) == 3:
            i = index(lineno, tokens[1])
            (alpha if kind == "alpha" else beta)[i] = value(lineno, tokens[2])
        elif kind == "pair" and len(tokens) == 4:
            i, j = index(lineno, tokens[1]), index(lineno, tokens[2])
            if i >= j:
                raise InstanceFormatError(f"line {lineno}: pair indices must satisfy i < j")
            if (i, j) in seen:
                raise InstanceFormatError(f"line {lineno}: duplicate pair ({i + 1}, {j + 1})")
            seen.add((i, j))
            pairs.append((i, j))
            couplings.append(value(lineno, tokens[3]))
        else:
            raise InstanceFormatError(f"line {lineno}: unrecognized entry {' '.join(tokens)!r}")
    if np.any(alpha < 0):
        raise InstanceFormatError("alpha coefficients must be non-negative")
    return HamiltonianSpec(n, alpha, beta, np.array(pairs, dtype=np.int64).reshape(-1, 2), couplings)


def save_spec(spec: HamiltonianSpec, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(format_spec(spec))


def load_spec(path: str | os.PathLike) -> HamiltonianSpec:
    with open(path) as fh:
        return parse_spec(fh)


def config_index(x) -> np.ndarray | int:
    """Row index of configuration(s); x[0] is the most significant bit."""
    x = np.asarray(x, dtype=np.int64)
    n = x.shape[-1]
    idx = x @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))
    return int(idx) if x.ndim == 1 else idx


def all_configs(n: int) -> np.ndarray:
    """All 2^n configurations, row k is the binary expansion of k."""
    k = np.arange(1 << n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)

