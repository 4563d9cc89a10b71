"""Centralized generalized least squares: estimator, loss and confidence intervals."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError


@dataclass
class GlsSolution:
    w_hat: np.ndarray
    cov: np.ndarray
    residual_error: float
    level: float = 0.97

    @property
    def half_width(self) -> np.ndarray:
        return norm.ppf(0.5 + self.level / 2) * np.sqrt(np.diag(self.cov))

    @property
    def ci(self) -> np.ndarray:
        """``(p, 2)`` array of lower and upper interval ends."""
        h = self.half_width
        return np.column_stack([self.w_hat - h, self.w_hat + h])

    def contains(self, w) -> np.ndarray:
        lo, hi = self.ci.T
        w = np.asarray(w, dtype=float)
        return (w >= lo) & (w <= hi)


def _omega_inv(Omega, n):
    Omega = np.asarray(Omega, dtype=float)
    if Omega.ndim == 0:
        return np.eye(n) / float(Omega)
    if Omega.ndim == 1:
        return np.diag(1.0 / Omega)
    return np.linalg.inv(Omega)


def gls_solve(X, Omega, y, level=0.97) -> GlsSolution:
    """Minimize ``(y - X w)^T Omega^{-1} (y - X w) / 2``.

    ``Omega`` may be a full matrix, its diagonal, or a scalar variance.
    Raises ``ConfigurationError`` listing the null directions when the normal
    matrix is singular.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ConfigurationError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not 0 < level < 1:
        raise ConfigurationError("confidence level must be in (0, 1)")
    Wi = _omega_inv(Omega, X.shape[0])
    A = X.T @ Wi @ X
    vals, vecs = np.linalg.eigh(A)
    tol = vals.max() * A.shape[0] * np.finfo(float).eps if vals.size else 0.0
    null = vals <= tol
    if np.any(null):
        dirs = "; ".join(np.array2string(v, precision=3) for v in vecs[:, null].T)
        raise ConfigurationError(f"normal matrix is singular; deficient directions: {dirs}")
    cov = np.linalg.inv(A)
    cov = 0.5 * (cov + cov.T)
    w_hat = np.linalg.solve(A, X.T @ Wi @ y)
    return GlsSolution(w_hat, cov, float(np.linalg.norm(y - X @ w_hat)), level)


def centralized_loss(w, X, Omega, y) -> float:
    r = np.asarray(y, dtype=float) - np.atleast_2d(X) @ np.asarray(w, dtype=float)
    return 0.5 * float(r @ _omega_inv(Omega, r.size) @ r)


def table_report(sol: GlsSolution, w_sgn, names=None, sgn_residual=None) -> dict:
    """Coefficient table: GLS value, SGN value, interval ends and an in-interval flag."""
    w_sgn = np.asarray(w_sgn, dtype=float)
    names = names or [f"w{i}" for i in range(sol.w_hat.size)]
    inside = sol.contains(w_sgn)
    rows = [{"coefficient": n, "gls": float(g), "sgn": float(s), "ci_low": float(lo),
             "ci_high": float(hi), "in_ci": bool(f)}
            for n, g, s, (lo, hi), f in zip(names, sol.w_hat, w_sgn, sol.ci, inside)]
    out = {"level": sol.level, "rows": rows, "in_ci_count": int(inside.sum()),
           "gls_residual_error": sol.residual_error}
    if sgn_residual is not None:
        out["sgn_residual_error"] = float(sgn_residual)
    return out


def write_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
