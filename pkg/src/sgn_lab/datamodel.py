"""Linear data model with individual and common (cross-node correlated) noise.

Node ``i`` observes ``y_{i,k} = X_i w* + eps_{i,k} + Lambda_i xi_k`` where
``eps_{i,k}`` has covariance ``sigma_i^2 I`` and ``xi_k`` is shared by every
node that consumes sample index ``k``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

NOISE_KINDS = ("gaussian", "uniform", "none")


@dataclass(frozen=True)
class GroundTruth:
    w_star: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w_star, dtype=float))
        if w.ndim != 1 or w.size < 1:
            raise ConfigurationError("w_star must be a non-empty vector")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("w_star has non-finite entries")
        object.__setattr__(self, "w_star", w)

    @property
    def p(self) -> int:
        return self.w_star.size


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean, unit-variance base distribution for both noise sources.

    ``"none"`` yields exact observations while ``Omega`` still sets the
    weighting, which gives noise-free streams for deterministic checks.
    """

    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")

    def standard(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "none":
            return np.zeros(size)
        # U(-sqrt3, sqrt3) has unit variance
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)


@dataclass
class NodeDataSpec:
    """Per-node data: design matrix, noise loadings and stream rate.

    ``lambda_diag`` holds the diagonal of the common-noise loading matrix.
    ``alpha_hat`` may be left ``None`` and filled from covariance traces.
    """

    node_id: int
    X: np.ndarray
    sigma2: float
    lambda_diag: np.ndarray
    mu: float = 1.0
    alpha_hat: float | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.lambda_diag = np.atleast_1d(np.asarray(self.lambda_diag, dtype=float))
        self.sigma2 = float(self.sigma2)
        self.mu = float(self.mu)
        m = self.X.shape[0]
        if self.lambda_diag.shape != (m,):
            raise ConfigurationError(
                f"node {self.node_id}: lambda_diag has length {self.lambda_diag.size}, X has {m} rows"
            )
        if self.sigma2 < 0:
            raise ConfigurationError(f"node {self.node_id}: negative sigma2")
        if self.mu <= 0:
            raise ConfigurationError(f"node {self.node_id}: stream rate mu must be positive")
        if self.alpha_hat is not None:
            self.alpha_hat = float(self.alpha_hat)
            if self.alpha_hat <= 0:
                raise ConfigurationError(f"node {self.node_id}: alpha_hat must be positive")
        if np.any(self.omega_diag <= 0):
            raise ConfigurationError(
                f"node {self.node_id}: covariance is singular (sigma2 = 0 and a zero loading)"
            )

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.lambda_diag)

    @property
    def omega_diag(self) -> np.ndarray:
        return self.sigma2 + self.lambda_diag**2

    @property
    def omega(self) -> np.ndarray:
        return np.diag(self.omega_diag)

    @property
    def omega_inv(self) -> np.ndarray:
        return np.diag(1.0 / self.omega_diag)

    @property
    def omega_trace(self) -> float:
        return float(self.omega_diag.sum())

    @property
    def gain(self) -> np.ndarray:
        """``X^T Omega^{-1}``, the map from a residual to a gradient."""
        return self.X.T / self.omega_diag

    @property
    def hessian(self) -> np.ndarray:
        """``X^T Omega^{-1} X``."""
        return self.gain @ self.X


def node_covariance(spec: NodeDataSpec) -> np.ndarray:
    """Covariance ``sigma^2 I + Lambda^2`` of one node's observation noise.

    The inverse and trace are available as ``spec.omega_inv`` and
    ``spec.omega_trace``.
    """
    return spec.omega


def global_covariance(specs) -> np.ndarray:
    """Joint noise covariance of the stacked observation vector.

    Block ``(i, j)`` is ``Lambda_i Lambda_j^T`` off the diagonal and
    ``sigma_i^2 I + Lambda_i^2`` on it.
    """
    specs = list(specs)
    if not specs:
        raise ConfigurationError("need at least one node")
    m = specs[0].m
    if any(s.m != m for s in specs):
        raise ConfigurationError("all nodes must have the same number of rows m")
    # stacked Lambda is the block column [Lambda_1; ...; Lambda_N]
    stacked = np.vstack([np.diag(s.lambda_diag) for s in specs])
    sigma = np.repeat([s.sigma2 for s in specs], m)
    return stacked @ stacked.T + np.diag(sigma)


@dataclass(frozen=True)
class Sample:
    node_id: int
    k: int
    y: np.ndarray


def draw_sample(spec, w_star, xi_k, rng, k=0, noise=NoiseModel()) -> Sample:
    """One observation ``X_i w* + eps + Lambda_i xi_k``.

    ``xi_k`` must be the trial-wide common-noise vector for index ``k`` so that
    nodes consuming the same index are correlated.
    """
    w = w_star.w_star if isinstance(w_star, GroundTruth) else np.asarray(w_star, dtype=float)
    eps = np.sqrt(spec.sigma2) * noise.standard(rng, spec.m)
    y = spec.X @ w + eps + spec.lambda_diag * np.asarray(xi_k, dtype=float)
    return Sample(spec.node_id, k, y)


class CommonNoise:
    """Lazily drawn, cached common-noise sequence ``xi_1, xi_2, ...`` for one trial.

    Draws happen in blocks so that the realised sequence does not depend on
    the order in which nodes ask for indices.
    """

    def __init__(self, m, rng, noise=NoiseModel(), block=256):
        self.m = m
        self.rng = rng
        self.noise = noise
        self.block = block
        self._xi = np.empty((0, m))

    def __len__(self):
        return self._xi.shape[0]

    def ensure(self, count):
        while self._xi.shape[0] < count:
            fresh = self.noise.standard(self.rng, (self.block, self.m))
            self._xi = np.vstack([self._xi, fresh])

    def get(self, k) -> np.ndarray:
        self.ensure(k + 1)
        return self._xi[k]

    def rows(self, count) -> np.ndarray:
        self.ensure(count)
        return self._xi[:count]


def weights_from_trace(specs):
    """Inverse-trace ensemble weights.

    Returns ``(alpha_hat, alpha, c)`` with ``alpha_hat_i = 1/tr(Omega_i)``,
    ``c = sum(alpha_hat)`` and ``alpha = alpha_hat / c``.
    """
    traces = np.array([s.omega_trace for s in specs], dtype=float)
    if np.any(traces <= 0):
        raise ConfigurationError("covariance trace must be positive for every node")
    alpha_hat = 1.0 / traces
    c = float(alpha_hat.sum())
    return alpha_hat, alpha_hat / c, c


@dataclass
class Problem:
    """A full estimation problem: node specs, ground truth and noise kind."""

    nodes: list
    truth: GroundTruth
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if not self.nodes:
            raise ConfigurationError("problem has no nodes")
        if not isinstance(self.truth, GroundTruth):
            self.truth = GroundTruth(self.truth)
        m, p = self.nodes[0].m, self.nodes[0].p
        for s in self.nodes:
            if (s.m, s.p) != (m, p):
                raise ConfigurationError(
                    f"node {s.node_id} has shape {(s.m, s.p)}, expected {(m, p)}"
                )
        if p != self.truth.p:
            raise ConfigurationError(f"w_star has length {self.truth.p}, X has {p} columns")
        if [s.node_id for s in self.nodes] != list(range(len(self.nodes))):
            raise ConfigurationError("node ids must be 0..N-1 in order")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return self.nodes[0].m

    @property
    def p(self) -> int:
        return self.nodes[0].p

    @property
    def w_star(self) -> np.ndarray:
        return self.truth.w_star

    @property
    def mus(self) -> np.ndarray:
        return np.array([s.mu for s in self.nodes])

    @property
    def alpha_hat(self) -> np.ndarray:
        """Raw weights; nodes without an explicit value fall back to 1/trace."""
        if all(s.alpha_hat is not None for s in self.nodes):
            return np.array([s.alpha_hat for s in self.nodes])
        fallback, _, _ = weights_from_trace(self.nodes)
        return np.array([s.alpha_hat if s.alpha_hat is not None else fallback[i]
                         for i, s in enumerate(self.nodes)])

    @property
    def alpha(self) -> np.ndarray:
        a = self.alpha_hat
        return a / a.sum()

    @property
    def c(self) -> float:
        return float(self.alpha_hat.sum())

    def with_alpha_hat(self, alpha_hat):
        nodes = [NodeDataSpec(s.node_id, s.X, s.sigma2, s.lambda_diag, s.mu, float(a))
                 for s, a in zip(self.nodes, alpha_hat)]
        return Problem(nodes, self.truth, self.noise)

    def stacked_X(self) -> np.ndarray:
        return np.vstack([s.X for s in self.nodes])

    def covariance(self) -> np.ndarray:
        return global_covariance(self.nodes)

    # serialization

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "m": self.m,
            "nodes": [
                {
                    "X": s.X.ravel().tolist(),
                    "sigma2": s.sigma2,
                    "lambda_diag": s.lambda_diag.tolist(),
                    "mu": s.mu,
                    **({"alpha_hat": s.alpha_hat} if s.alpha_hat is not None else {}),
                }
                for s in self.nodes
            ],
            "w_star": self.w_star.tolist(),
            "noise": {"kind": self.noise.kind},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        try:
            p, m = int(d["p"]), int(d["m"])
            nodes = []
            for i, nd in enumerate(d["nodes"]):
                X = np.asarray(nd["X"], dtype=float)
                if X.ndim == 1:
                    if X.size != m * p:
                        raise ConfigurationError(f"node {i}: X has {X.size} entries, expected {m * p}")
                    X = X.reshape(m, p)
                nodes.append(NodeDataSpec(i, X, nd["sigma2"], nd["lambda_diag"],
                                          nd.get("mu", 1.0), nd.get("alpha_hat")))
            noise = NoiseModel(d.get("noise", {}).get("kind", "gaussian"))
            return cls(nodes, GroundTruth(d["w_star"]), noise)
        except KeyError as exc:
            raise ConfigurationError(f"problem file is missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "Problem":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
