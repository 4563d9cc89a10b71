"""Undirected topologies, (generalized) Laplacians and spectral quantities."""
from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigvalsh

from .errors import ConfigurationError


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset

    def __post_init__(self):
        norm = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ConfigurationError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ConfigurationError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_edges(cls, n, edges):
        edges = list(edges)
        seen = set()
        for i, j in edges:
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigurationError(f"duplicate edge {key}")
            seen.add(key)
        return cls(n, frozenset(seen))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self, i) -> list:
        return sorted(j for e in self.edges if i in e for j in e if j != i)

    def is_connected(self) -> bool:
        """Union-find connectivity check (independent of the spectrum)."""
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.edges:
            parent[find(i)] = find(j)
        return len({find(i) for i in range(self.n)}) <= 1

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, d) -> "Topology":
        return cls.from_edges(int(d["n"]), [tuple(e) for e in d["edges"]])

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))


def laplacian(t: Topology) -> np.ndarray:
    a = t.adjacency()
    return np.diag(a.sum(axis=1)) - a


def generalized_laplacian(t: Topology, alpha_hat) -> np.ndarray:
    """Laplacian of the graph with edge weights ``alpha_hat_i * alpha_hat_j``."""
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if alpha_hat.shape != (t.n,):
        raise ConfigurationError(f"need {t.n} weights, got {alpha_hat.shape}")
    if np.any(alpha_hat <= 0):
        raise ConfigurationError("weights must be positive")
    w = np.outer(alpha_hat, alpha_hat) * t.adjacency()
    return np.diag(w.sum(axis=1)) - w


def algebraic_connectivity(M) -> float:
    """Second-smallest eigenvalue of a symmetric PSD matrix (dense solver)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("matrix is not symmetric")
    if M.shape[0] < 2:
        return 0.0
    vals = eigvalsh(M, subset_by_index=[0, 1])
    return float(vals[1])


@dataclass(frozen=True)
class SpectralSummary:
    lambda2: float
    lambda2_hat: float
    connected: bool


def spectral_summary(t: Topology, alpha_hat) -> SpectralSummary:
    return SpectralSummary(
        algebraic_connectivity(laplacian(t)),
        algebraic_connectivity(generalized_laplacian(t, alpha_hat)),
        t.is_connected(),
    )


def complete(n) -> Topology:
    return Topology(n, frozenset(itertools.combinations(range(n), 2)))


def geometric(positions, radius) -> Topology:
    """Connect every pair of points closer than ``radius`` (inclusive)."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    edges = {(i, j) for i, j in itertools.combinations(range(n), 2) if d[i, j] <= radius}
    return Topology(n, frozenset(edges))


def edge_fraction(n, fraction, rng, exact=False) -> Topology:
    """Subsample the complete graph on ``n`` nodes.

    By default each edge survives independently with probability ``fraction``;
    with ``exact=True`` exactly ``floor(fraction * E)`` edges are kept.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"edge fraction {fraction} outside [0, 1]")
    all_edges = list(itertools.combinations(range(n), 2))
    if exact:
        k = int(np.floor(fraction * len(all_edges)))
        idx = rng.choice(len(all_edges), size=k, replace=False) if k else []
        kept = [all_edges[i] for i in idx]
    else:
        keep = rng.random(len(all_edges)) < fraction
        kept = [e for e, flag in zip(all_edges, keep) if flag]
    return Topology(n, frozenset(kept))


def generate(kind, rng=None, **params) -> Topology:
    """Dispatch on ``kind`` in {"complete", "geometric", "edge_fraction"}."""
    if kind == "complete":
        return complete(params["n"])
    if kind == "geometric":
        return geometric(params["positions"], params["radius"])
    if kind == "edge_fraction":
        if rng is None:
            raise ConfigurationError("edge_fraction topology needs an rng")
        return edge_fraction(params["n"], params["fraction"], rng, params.get("exact", False))
    raise ConfigurationError(f"unknown topology kind {kind!r}")


def mixing_matrix(t: Topology, alpha_hat, gamma, delta) -> np.ndarray:
    """Linear map applied to stacked scalar models by one regularization step.

    Rows always sum to one; columns generally do not, so the matrix is not
    doubly stochastic unless the weights are uniform.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    off = gamma * delta * t.adjacency() * alpha_hat[None, :]
    W = off.copy()
    np.fill_diagonal(W, 1.0 - off.sum(axis=1))
    if np.any(np.diag(W) < 0):
        warnings.warn("gamma*delta too large: negative self-weight in the mixing matrix", stacklevel=2)
    return W


def column_sums(W) -> np.ndarray:
    return np.asarray(W).sum(axis=0)
