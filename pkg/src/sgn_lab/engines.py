"""Discrete SGN, discrete federated learning and the SDE reference dynamics.

The per-event functions (``sgn_apply_event``, ``fl_apply_event``) are the
readable reference implementation. ``run_trial`` drives the same dynamics
through compiled kernels, drawing exactly the same random numbers, so both
paths produce identical trajectories for a given seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .datamodel import CommonNoise, Problem, draw_sample
from .errors import ConfigurationError, DivergenceError
from .graph import Topology
from .metrics import MetricsSeries, consistency, ensemble_average, fl_error, regularity
from .streams import DISTRIBUTIONS, Event, EventKind, schedule_init

KINDS = ("sgn", "fl", "sde", "sde-fl")
LIMIT = 1e12


def local_gradient(w_i, y, spec) -> np.ndarray:
    """Noisy GLS gradient ``X^T Omega^{-1} (X w_i - y)``."""
    return spec.gain @ (spec.X @ np.asarray(w_i, dtype=float) - np.asarray(y, dtype=float))


def penalty_gradient(i, w, alpha_hat, t: Topology) -> np.ndarray:
    """``sum_j alpha_hat_j a_ij (w_i - w_j)`` over the neighbours of ``i``."""
    w = np.asarray(w, dtype=float)
    w = w.reshape(len(w), -1)
    out = np.zeros(w.shape[1])
    for j in t.neighbors(i):
        out += alpha_hat[j] * (w[i] - w[j])
    return out


@dataclass
class EngineConfig:
    """Step size, penalty, sync rate and the snapshot grid.

    ``snapshot_times`` are on the event clock for every engine; the SDE is
    integrated up to ``gamma * t`` for each snapshot ``t``. ``dt`` is the
    Euler-Maruyama step in SDE time (chosen from the stiffness when None).
    """

    gamma: float
    delta: float = 0.0
    beta: float = 1.0
    snapshot_times: list = field(default_factory=lambda: [1.0])
    distribution: str = "exponential"
    w0: np.ndarray | None = None
    dt: float | None = None
    limit: float = LIMIT

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigurationError(f"step size gamma must be finite and >= 0, got {self.gamma}")
        if self.delta < 0:
            raise ConfigurationError("penalty delta must be non-negative")
        if self.beta < 0:
            raise ConfigurationError("sync rate beta must be non-negative")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(f"unknown clock distribution {self.distribution!r}")
        t = np.asarray(self.snapshot_times, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ConfigurationError("snapshot_times must be a non-empty increasing list of times >= 0")
        self.snapshot_times = t.tolist()
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError("dt must be positive")

    @property
    def horizon(self) -> float:
        return self.snapshot_times[-1]


@dataclass
class SgnState:
    w: np.ndarray
    sim_time: float = 0.0
    sample_counters: np.ndarray | None = None

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float, ndmin=2)
        if self.sample_counters is None:
            self.sample_counters = np.zeros(len(self.w), dtype=np.int64)


@dataclass
class FlState:
    w: np.ndarray
    sim_time: float = 0.0
    sample_counters: np.ndarray | None = None

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float, ndmin=1)


def initial_models(problem: Problem, config: EngineConfig) -> np.ndarray:
    """Starting model shared by every node (zeros unless ``w0`` is given)."""
    if config.w0 is None:
        return np.zeros(problem.p)
    w0 = np.asarray(config.w0, dtype=float)
    if w0.shape != (problem.p,):
        raise ConfigurationError(f"w0 has shape {w0.shape}, expected ({problem.p},)")
    return w0


# random streams


@dataclass
class TrialStreams:
    """Independent generators for one trial.

    The layout is fixed so that SGN and FL runs with the same seed see the
    same clocks and the same noise samples.
    """

    clocks: np.random.Generator
    node: list
    common: np.random.Generator

    @classmethod
    def from_seed(cls, seed, n_nodes):
        if isinstance(seed, np.random.SeedSequence):
            # fresh copy so that reusing ``seed`` always yields the same children
            ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
        else:
            ss = np.random.SeedSequence(seed)
        clock_ss, node_ss, common_ss = ss.spawn(3)
        return cls(np.random.default_rng(clock_ss),
                   [np.random.default_rng(s) for s in node_ss.spawn(n_nodes)],
                   np.random.default_rng(common_ss))


class DataSource:
    """Sample generator: node ``i``'s ``k``-th observation uses ``xi_k``."""

    def __init__(self, problem: Problem, streams: TrialStreams):
        self.problem = problem
        self.node_rngs = streams.node
        self.common = CommonNoise(problem.m, streams.common, problem.noise)

    def sample(self, i, k):
        spec = self.problem.nodes[i]
        return draw_sample(spec, self.problem.w_star, self.common.get(k), self.node_rngs[i],
                           k=k, noise=self.problem.noise)

    def node_noise(self, i, count) -> np.ndarray:
        """Next ``count`` scaled individual-noise vectors of node ``i``."""
        spec = self.problem.nodes[i]
        return math.sqrt(spec.sigma2) * self.problem.noise.standard(self.node_rngs[i], (count, spec.m))


def _check(w, limit, node, step, time):
    if not np.all(np.abs(w) <= limit):
        raise DivergenceError("model left the finite range", node=node, step=step, time=time)


def sgn_apply_event(state: SgnState, ev: Event, config: EngineConfig, problem: Problem,
                    topology: Topology, source: DataSource) -> SgnState:
    """Apply one gradient or sync event to the SGN models (returns a new state)."""
    if ev.time < state.sim_time:
        raise ConfigurationError(f"event at {ev.time} precedes state time {state.sim_time}")
    w = state.w.copy()
    counters = state.sample_counters.copy()
    step = int(counters.sum())
    if ev.kind == EventKind.GRADIENT:
        i = ev.node
        s = source.sample(i, int(counters[i]))
        counters[i] += 1
        w[i] -= config.gamma * local_gradient(w[i], s.y, problem.nodes[i])
        _check(w[i], config.limit, i, step, ev.time)
    elif config.delta != 0:
        alpha_hat = problem.alpha_hat
        frozen = state.w
        for i in range(problem.n_nodes):
            w[i] = frozen[i] - config.gamma * config.delta * penalty_gradient(i, frozen, alpha_hat, topology)
            _check(w[i], config.limit, i, step, ev.time)
    return SgnState(w, ev.time, counters)


def fl_apply_event(state: FlState, ev: Event, config: EngineConfig, problem: Problem,
                   source: DataSource) -> FlState:
    """Apply one event to the shared federated model; sync events are ignored."""
    if ev.time < state.sim_time:
        raise ConfigurationError(f"event at {ev.time} precedes state time {state.sim_time}")
    counters = (np.zeros(problem.n_nodes, dtype=np.int64) if state.sample_counters is None
                else state.sample_counters.copy())
    w = state.w.copy()
    if ev.kind == EventKind.GRADIENT:
        i = ev.node
        s = source.sample(i, int(counters[i]))
        counters[i] += 1
        w -= config.gamma * local_gradient(w, s.y, problem.nodes[i])
        _check(w, config.limit, i, int(counters.sum()), ev.time)
    return FlState(w, ev.time, counters)


# SDE


@dataclass
class SdeCoefficients:
    """Drift and diffusion coefficients of the continuous-time model."""

    mu: np.ndarray
    H: np.ndarray       # (N, p, p)
    hw: np.ndarray      # (N, p)  H_i w*
    G: np.ndarray       # (N, p, m)
    lam: np.ndarray     # (N, m)
    tau: np.ndarray
    vs: np.ndarray

    @classmethod
    def build(cls, problem: Problem, gamma: float):
        mu = problem.mus
        G = np.stack([s.gain for s in problem.nodes])
        H = np.stack([s.hessian for s in problem.nodes])
        sig = np.sqrt([s.sigma2 for s in problem.nodes])
        scale = 0.0 if problem.noise.kind == "none" else 1.0
        return cls(mu, H, H @ problem.w_star, G, np.stack([s.lambda_diag for s in problem.nodes]),
                   scale * sig * np.sqrt(gamma * mu), scale * np.sqrt(gamma * mu))


def _csr(topology: Topology, alpha_hat):
    ptr = [0]
    idx, wt = [], []
    for i in range(topology.n):
        nb = topology.neighbors(i)
        idx.extend(nb)
        wt.extend(alpha_hat[j] for j in nb)
        ptr.append(len(idx))
    return (np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64),
            np.asarray(wt, dtype=float))


def auto_dt(problem: Problem, config: EngineConfig, topology: Topology | None, fl=False) -> float:
    """Euler-Maruyama step from a Gershgorin bound on the drift's stiffness."""
    norms = np.array([np.linalg.norm(s.hessian, 2) for s in problem.nodes]) * problem.mus
    if fl:
        rate = norms.sum()
    else:
        rate = norms.max()
        if topology is not None and config.delta > 0:
            pull = topology.adjacency() @ problem.alpha_hat
            rate += 2 * config.delta * config.beta * pull.max()
    return 0.02 / rate


def sde_step(w, dt, config: EngineConfig, problem: Problem, topology: Topology | None, rng,
             fl=False) -> np.ndarray:
    """One Euler-Maruyama step for every node (or for the shared model when ``fl``).

    ``rng`` draws the independent increments first, then the shared one.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    co = SdeCoefficients.build(problem, config.gamma)
    N, m = problem.n_nodes, problem.m
    dB_i = rng.standard_normal((N, m)) * math.sqrt(dt)
    dB = rng.standard_normal(m) * math.sqrt(dt)
    z = co.tau[:, None] * dB_i + co.vs[:, None] * co.lam * dB[None, :]
    noise = np.einsum("ipq,iq->ip", co.G, z)
    if fl:
        w = np.asarray(w, dtype=float)
        drift = -sum(co.mu[i] * (co.H[i] @ w - co.hw[i]) for i in range(N))
        out = w + drift * dt + noise.sum(axis=0)
    else:
        w = np.asarray(w, dtype=float).reshape(N, -1)
        grad = np.einsum("ipq,iq->ip", co.H, w) - co.hw
        pen = np.zeros_like(w)
        if topology is not None and config.delta > 0:
            pen = np.stack([penalty_gradient(i, w, problem.alpha_hat, topology) for i in range(N)])
        out = w - (co.mu[:, None] * grad + config.delta * config.beta * pen) * dt + noise
    _check(out, config.limit, None, None, None)
    return out


# trial driver


def _record(kind, w, problem, alpha):
    if kind in ("sgn", "sde"):
        w_hat = ensemble_average(w, alpha)
        return {"Vbar": regularity(w, alpha), "U": consistency(w, alpha, problem.w_star),
                "phi": float(np.linalg.norm(w_hat - problem.w_star))}
    return {"F": fl_error(w, problem.w_star), "phi": float(np.linalg.norm(w - problem.w_star))}


def run_trial(kind, problem: Problem, topology: Topology | None, config: EngineConfig, seed,
              trial=0, keep_models=False) -> MetricsSeries:
    """Simulate one trial and record metrics at every snapshot time.

    ``kind`` is one of ``sgn``, ``fl``, ``sde`` (SGN diffusion) or ``sde-fl``.
    Deterministic in ``seed`` (an int or a ``SeedSequence``).
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown engine {kind!r}; expected one of {KINDS}")
    if kind in ("sgn", "sde") and topology is None:
        raise ConfigurationError(f"{kind} needs a topology")
    if topology is not None and topology.n != problem.n_nodes:
        raise ConfigurationError(f"topology has {topology.n} nodes, problem has {problem.n_nodes}")
    N = problem.n_nodes
    streams = TrialStreams.from_seed(seed, N)
    w0 = initial_models(problem, config)
    shared = kind in ("fl", "sde-fl")
    w = w0.copy() if shared else np.tile(w0, (N, 1))
    alpha = problem.alpha
    run = _run_sde if kind.startswith("sde") else _run_discrete
    rows, models = run(kind, w, problem, topology, config, streams, alpha, keep_models)
    values = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return MetricsSeries(trial, np.asarray(config.snapshot_times), values,
                         np.asarray(models) if keep_models else None)


def _run_discrete(kind, w, problem, topology, config, streams, alpha, keep_models):
    N, m = problem.n_nodes, problem.m
    beta = config.beta if kind == "sgn" else 0.0
    queue = schedule_init(problem.mus, beta, streams.clocks, config.distribution)
    source = DataSource(problem, streams)
    X = np.stack([s.X for s in problem.nodes])
    xw = X @ problem.w_star
    lam = np.stack([s.lambda_diag for s in problem.nodes])
    G = np.stack([s.gain for s in problem.nodes])
    csr = _csr(topology, problem.alpha_hat) if kind == "sgn" else None
    counters = np.zeros(N, dtype=np.int64)
    done = 0
    rows, models = [], []
    for t_snap in config.snapshot_times:
        times, kinds, nodes = queue.drain(t_snap)
        grad = kinds == int(EventKind.GRADIENT)
        ks = np.zeros(kinds.size, dtype=np.int64)
        eps = np.zeros((kinds.size, m))
        for i in range(N):
            sel = np.flatnonzero(grad & (nodes == i))
            if sel.size:
                ks[sel] = counters[i] + np.arange(sel.size)
                eps[sel] = source.node_noise(i, sel.size)
                counters[i] += sel.size
        xi = source.common.rows(int(counters.max()) if N else 0)
        if kind == "sgn":
            bad, node = _kernels.sgn_events(w, kinds, nodes, ks, eps, xi, X, xw, lam, G, *csr,
                                            config.gamma, config.gamma * config.delta, config.limit)
        else:
            bad, node = _kernels.fl_events(w, kinds, nodes, ks, eps, xi, X, xw, lam, G,
                                           config.gamma, config.limit)
        if bad >= 0:
            raise DivergenceError("model left the finite range", node=int(node),
                                  step=done + int(bad), time=float(times[bad]))
        done += kinds.size
        rows.append(_record(kind, w, problem, alpha))
        if keep_models:
            models.append(np.array(w, ndmin=2))
    return rows, models


def _run_sde(kind, w, problem, topology, config, streams, alpha, keep_models):
    fl = kind == "sde-fl"
    N, m = problem.n_nodes, problem.m
    co = SdeCoefficients.build(problem, config.gamma)
    dt_max = config.dt or auto_dt(problem, config, topology, fl)
    if not fl:
        ptr, idx, wt = _csr(topology, problem.alpha_hat)
        db = config.delta * config.beta
    now = 0.0
    step = 0
    rows, models = [], []
    chunk = max(1, 2_000_000 // max(1, N * m))
    for t_snap in config.snapshot_times:
        span = config.gamma * t_snap - now
        n_steps = int(math.ceil(span / dt_max - 1e-9)) if span > 0 else 0
        dt = span / n_steps if n_steps else 0.0
        left = n_steps
        while left:
            n = min(left, chunk)
            dB_node = np.empty((n, N, m))
            for i in range(N):
                dB_node[:, i, :] = streams.node[i].standard_normal((n, m))
            dB_node *= math.sqrt(dt)
            dB_common = streams.common.standard_normal((n, m)) * math.sqrt(dt)
            if fl:
                bad, node = _kernels.fl_sde(w, dB_node, dB_common, dt, co.mu, co.H, co.hw, co.G,
                                            co.lam, co.tau, co.vs, config.limit)
            else:
                bad, node = _kernels.sgn_sde(w, dB_node, dB_common, dt, co.mu, co.H, co.hw, co.G,
                                             co.lam, co.tau, co.vs, ptr, idx, wt, db, config.limit)
            if bad >= 0:
                raise DivergenceError("SDE path left the finite range",
                                      node=None if node < 0 else int(node), step=step + int(bad),
                                      time=(now + (bad + 1) * dt) / config.gamma if config.gamma else None)
            step += n
            now += n * dt
            left -= n
        now = config.gamma * t_snap
        rows.append(_record(kind, w, problem, alpha))
        if keep_models:
            models.append(np.array(w, ndmin=2))
    return rows, models


def with_overrides(config: EngineConfig, **kw) -> EngineConfig:
    return replace(config, **kw)


# mini-batch mode with estimated weights


@dataclass
class BatchConfig:
    """Settings for SGN on a fixed table split across nodes.

    Each gradient event draws ``mini_batch`` rows without replacement. The
    per-node noise trace is re-estimated from the last ``window`` residual
    vectors and smoothed with fading factor ``phi``; raw weights
    ``1/trace`` are refreshed at every sync event.
    """

    gamma: float = 1e-3
    delta: float = 100.0
    beta: float = 1.0
    snapshot_times: list = field(default_factory=lambda: [3000.0])
    mini_batch: int = 10
    phi: float = 0.9
    window: int = 15
    mu: float = 1.0
    limit: float = LIMIT

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError("step size gamma must be positive")
        if not 0 < self.phi <= 1:
            raise ConfigurationError("fading factor phi must be in (0, 1]")
        if self.window < 2 or self.mini_batch < 1:
            raise ConfigurationError("window must be >= 2 and mini_batch >= 1")
        self.snapshot_times = EngineConfig(1.0, snapshot_times=self.snapshot_times).snapshot_times


def run_batch_trial(data, topology: Topology, config: BatchConfig, seed, trial=0) -> MetricsSeries:
    """SGN over a node-partitioned table; ``phi`` is the pooled residual norm."""
    from .metrics import fading_trace, window_trace

    N, p = data.n_nodes, data.X.shape[1]
    b = config.mini_batch
    streams = TrialStreams.from_seed(seed, N)
    queue = schedule_init(np.full(N, config.mu), config.beta, streams.clocks)
    rows = [data.node_rows(i) for i in range(N)]
    w = np.zeros((N, p))
    trace = np.full(N, float(b))
    alpha_hat = 1.0 / trace
    windows = [[] for _ in range(N)]
    nbrs = [topology.neighbors(i) for i in range(N)]
    gd = config.gamma * config.delta
    out, models, traces = [], [], []
    for t_snap in config.snapshot_times:
        _, kinds, nodes = queue.drain(t_snap)
        for kind, i in zip(kinds, nodes):
            if kind == EventKind.GRADIENT:
                pick = streams.node[i].choice(rows[i], size=b, replace=False)
                Xb, yb = data.X[pick], data.y[pick]
                r = Xb @ w[i] - yb
                w[i] -= config.gamma * (Xb.T @ r) / (trace[i] / b)
                if not np.all(np.abs(w[i]) <= config.limit):
                    raise DivergenceError("model left the finite range", node=int(i))
                win = windows[i]
                win.append(r)
                if len(win) > config.window:
                    win.pop(0)
                if len(win) == config.window:
                    trace[i] = fading_trace(trace[i], window_trace(win), config.phi)
            elif gd:
                alpha_hat = 1.0 / trace
                old = w.copy()
                for j in range(N):
                    pull = sum(alpha_hat[k] * (old[j] - old[k]) for k in nbrs[j])
                    w[j] = old[j] - gd * pull
        a = 1.0 / trace
        w_hat = ensemble_average(w, a / a.sum())
        out.append(float(np.linalg.norm(data.y - data.X @ w_hat)))
        models.append(w.copy())
        traces.append(trace.copy())
    s = MetricsSeries(trial, np.asarray(config.snapshot_times), {"phi": np.array(out)}, np.asarray(models))
    s.traces = np.asarray(traces)
    return s
