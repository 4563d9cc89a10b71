"""Ensemble measures, estimation errors and trial aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

METRICS = ("Vbar", "U", "F", "phi")


def ensemble_average(w, alpha) -> np.ndarray:
    """Weighted average ``sum_i alpha_i w_i`` of the node models (rows of ``w``)."""
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return alpha @ w.reshape(len(alpha), -1)


def regularity(w, alpha) -> float:
    """Weighted dispersion ``sum_i alpha_i ||w_i - w_hat||^2 / 2``."""
    w = np.asarray(w, dtype=float).reshape(len(alpha), -1)
    e = w - ensemble_average(w, alpha)
    return 0.5 * float(np.asarray(alpha) @ np.einsum("ij,ij->i", e, e))


def consistency(w, alpha, w_star) -> float:
    """Half squared distance of the ensemble average from the ground truth."""
    d = ensemble_average(w, alpha) - np.asarray(w_star, dtype=float)
    return 0.5 * float(d @ d)


def lemma1_identity(w, alpha, w_star):
    """Both sides of ``1/2 sum alpha_i ||w_i - w*||^2 = Vbar + U``."""
    w = np.asarray(w, dtype=float).reshape(len(alpha), -1)
    d = w - np.asarray(w_star, dtype=float)
    lhs = 0.5 * float(np.asarray(alpha) @ np.einsum("ij,ij->i", d, d))
    return lhs, regularity(w, alpha) + consistency(w, alpha, w_star)


def fl_error(w_fl, w_star) -> float:
    d = np.asarray(w_fl, dtype=float) - np.asarray(w_star, dtype=float)
    return 0.5 * float(d @ d)


def estimation_error(w_hat, w_star=None, X=None, y=None, mode="parameter") -> float:
    """``||w_hat - w*||`` (parameter mode) or ``||y - X w_hat||`` (residual mode)."""
    w_hat = np.asarray(w_hat, dtype=float)
    if mode == "parameter":
        if w_star is None:
            raise ConfigurationError("parameter-mode error needs w_star")
        return float(np.linalg.norm(w_hat - np.asarray(w_star, dtype=float)))
    if mode == "residual":
        if X is None or y is None:
            raise ConfigurationError("residual-mode error needs X and y")
        return float(np.linalg.norm(np.asarray(y) - np.asarray(X) @ w_hat))
    raise ConfigurationError(f"unknown error mode {mode!r}")


def average_error(phis) -> float:
    """Mean of per-trial errors at one time point."""
    return float(np.mean(phis))


def scaled_error(final_errors, reference_errors) -> float:
    """Mean final error divided by the mean final error of a reference run."""
    if reference_errors is None or len(reference_errors) == 0:
        raise ConfigurationError("scaled error needs a reference run")
    ref = float(np.mean(reference_errors))
    if ref <= 0:
        raise ConfigurationError("reference run has zero error; cannot normalize")
    return float(np.mean(final_errors)) / ref


def fading_trace(prev, fresh, phi) -> float:
    """Exponential smoothing ``phi * prev + (1 - phi) * fresh``."""
    if not 0.0 < phi <= 1.0:
        raise ConfigurationError(f"fading parameter {phi} outside (0, 1]")
    if prev < 0 or fresh < 0:
        raise ConfigurationError("traces must be non-negative")
    return phi * prev + (1.0 - phi) * fresh


def window_trace(residuals) -> float:
    """Trace of the per-coordinate sample variance over a window of residual vectors."""
    r = np.asarray(residuals, dtype=float)
    if r.shape[0] < 2:
        raise ConfigurationError("need at least two residual vectors")
    return float(r.var(axis=0, ddof=1).sum())


@dataclass
class MetricsSeries:
    """Snapshot values of one trial, keyed by metric name.

    ``models`` optionally holds the node models at each snapshot, shape
    ``(snapshots, N, p)`` (``N = 1`` for the shared federated model).
    """

    trial: int
    times: np.ndarray
    values: dict = field(default_factory=dict)
    models: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("snapshot times must be strictly increasing")

    def __getitem__(self, name) -> np.ndarray:
        return self.values[name]

    def final(self, name) -> float:
        return float(self.values[name][-1])

    def rows(self):
        for name in METRICS:
            if name in self.values:
                for t, v in zip(self.times, self.values[name]):
                    yield self.trial, float(t), name, float(v)


def series_to_csv(series, fh=None):
    """Write ``trial,time,metric,value`` rows sorted by (trial, time, metric order)."""
    own = fh is None
    fh = io.StringIO() if own else fh
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["trial", "time", "metric", "value"])
    order = {m: i for i, m in enumerate(METRICS)}
    rows = sorted((r for s in series for r in s.rows()), key=lambda r: (r[0], r[1], order[r[2]]))
    for trial, t, name, v in rows:
        w.writerow([trial, repr(t), name, repr(v)])
    return fh.getvalue() if own else None


def summarize(series, z=1.959963984540054) -> dict:
    """Per-time mean and normal-approximation confidence half-width across trials."""
    series = list(series)
    if not series:
        return {}
    times = series[0].times
    for s in series:
        if not np.array_equal(s.times, times):
            raise ConfigurationError("trials have different snapshot grids")
    out = {"times": times.tolist(), "trials": len(series), "metrics": {}}
    for name in METRICS:
        if all(name in s.values for s in series):
            stack = np.vstack([s.values[name] for s in series])
            mean = stack.mean(axis=0)
            if len(series) > 1:
                half = z * stack.std(axis=0, ddof=1) / math.sqrt(len(series))
            else:
                half = np.zeros_like(mean)
            out["metrics"][name] = {"mean": mean.tolist(), "half_width": half.tolist()}
    return out
