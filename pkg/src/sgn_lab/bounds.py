"""Problem constants, finite-time error bounds and the SGN-vs-FL decision rules.

All bound curves are functions of diffusion time ``s``. The discrete engines
run on an event clock ``t``; the two are related by ``s = gamma * t``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from .datamodel import Problem
from .errors import ConfigurationError
from .graph import Topology, algebraic_connectivity, generalized_laplacian, laplacian

BETA_CONVENTIONS = ("proof", "statement")
KAPPA_CONVENTIONS = ("literal", "strict")
ETA_NORMS = ("spectral", "frobenius")


@dataclass(frozen=True)
class ProblemConstants:
    eta: float
    kappa: float
    mu: float
    mu_prime: float
    tau: np.ndarray
    varsigma: np.ndarray
    lambda2: float
    lambda2_hat: float
    c: float
    gamma: float

    @property
    def condition(self) -> float:
        """``mu' eta / (mu kappa)``, the rate mismatch that appears in both corollaries."""
        return self.mu_prime * self.eta / (self.mu * self.kappa) if self.kappa > 0 else math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau"] = self.tau.tolist()
        d["varsigma"] = self.varsigma.tolist()
        return d


def problem_constants(problem: Problem, gamma, topology: Topology | None = None,
                      kappa_convention="literal", eta_norm="spectral") -> ProblemConstants:
    """Curvature, rate and noise-scale constants of ``problem`` at step size ``gamma``.

    ``kappa`` is ``2 * min_i lambda_min(H_i)`` under the literal convention and
    ``min_i lambda_min(H_i)`` under the strict one.
    """
    if kappa_convention not in KAPPA_CONVENTIONS:
        raise ConfigurationError(f"unknown kappa convention {kappa_convention!r}")
    if eta_norm not in ETA_NORMS:
        raise ConfigurationError(f"unknown eta norm {eta_norm!r}")
    etas, kappas = [], []
    for s in problem.nodes:
        ev = eigvalsh(s.hessian)
        etas.append(ev[-1] if eta_norm == "spectral" else np.linalg.norm(s.hessian, "fro"))
        kappas.append(max(ev[0], 0.0))
    kappa = min(kappas) * (2.0 if kappa_convention == "literal" else 1.0)
    if kappa <= 1e-14 * max(etas):
        warnings.warn("a local Hessian is singular: kappa = 0 and the bounds degenerate", stacklevel=2)
        kappa = 0.0
    mus = problem.mus
    sig = np.sqrt([s.sigma2 for s in problem.nodes])
    if topology is not None:
        lam2 = algebraic_connectivity(laplacian(topology))
        lam2_hat = algebraic_connectivity(generalized_laplacian(topology, problem.alpha_hat))
    else:
        lam2 = lam2_hat = 0.0
    return ProblemConstants(float(max(etas)), float(kappa), float(mus.min()), float(mus.max()),
                            sig * np.sqrt(gamma * mus), np.sqrt(gamma * mus),
                            float(lam2), float(lam2_hat), problem.c, float(gamma))


def _gl(spec) -> np.ndarray:
    """``X^T Omega^{-1} Lambda``."""
    return spec.gain * spec.lambda_diag[None, :]


def hadamard_A(i, k, problem: Problem) -> float:
    """Sum of the entries of the Hadamard product of the two nodes' common-noise gains."""
    return float(np.sum(_gl(problem.nodes[i]) * _gl(problem.nodes[k])))


def hadamard_matrix(problem: Problem) -> np.ndarray:
    B = np.stack([_gl(s) for s in problem.nodes]).reshape(problem.n_nodes, -1)
    return B @ B.T


def _gain_norms(problem):
    return np.array([np.linalg.norm(s.gain, "fro") ** 2 for s in problem.nodes])


def _common_norms(problem):
    return np.array([np.linalg.norm(_gl(s), "fro") ** 2 for s in problem.nodes])


def constant_C1(problem: Problem, gamma, alpha=None):
    """Returns ``(C1, C1_per_node)``; warns when a per-node term is negative."""
    alpha = problem.alpha if alpha is None else np.asarray(alpha, dtype=float)
    tau2 = np.array([s.sigma2 for s in problem.nodes]) * gamma * problem.mus
    vs = np.sqrt(gamma * problem.mus)
    g2 = _gain_norms(problem)
    A = hadamard_matrix(problem)
    va = alpha * vs
    shared = np.sum(alpha**2 * tau2 * g2) + va @ A @ va
    per = tau2 * (1 - 2 * alpha) * g2 + shared + vs**2 * _common_norms(problem) - 2 * vs * (A @ va)
    scale = max(1.0, float(np.abs(per).max()))
    if np.any(per < -1e-12 * scale):
        warnings.warn("negative per-node noise constant C1_i", stacklevel=2)
    return 0.5 * float(alpha @ per), per


def constant_C2(problem: Problem, gamma, alpha=None) -> float:
    alpha = problem.alpha if alpha is None else np.asarray(alpha, dtype=float)
    tau2 = np.array([s.sigma2 for s in problem.nodes]) * gamma * problem.mus
    va = alpha * np.sqrt(gamma * problem.mus)
    return 0.5 * float(np.sum(alpha**2 * tau2 * _gain_norms(problem)) + va @ hadamard_matrix(problem) @ va)


def constant_C3(problem: Problem, gamma) -> float:
    tau2 = np.array([s.sigma2 for s in problem.nodes]) * gamma * problem.mus
    vs = np.sqrt(gamma * problem.mus)
    return 0.5 * float(np.sum(tau2 * _gain_norms(problem)) + vs @ hadamard_matrix(problem) @ vs)


def effective_beta(beta, c, convention="proof") -> float:
    """Sync rate entering the contraction: ``beta / c`` (proof) or ``beta`` (statement)."""
    if convention not in BETA_CONVENTIONS:
        raise ConfigurationError(f"unknown beta convention {convention!r}")
    return beta / c if convention == "proof" else beta


def _decay(rate, s):
    return np.exp(-rate * np.asarray(s, dtype=float))


@dataclass
class BoundReport:
    constants: ProblemConstants
    C1: float
    C1_per_node: np.ndarray
    C2: float
    C3: float
    delta: float
    beta: float
    beta_eff: float
    Vbar0: float = 0.0
    U0: float = 0.0
    F0: float = 0.0

    @property
    def sync_rate(self) -> float:
        return self.delta * self.beta_eff * self.constants.lambda2_hat

    def thm1(self, s):
        r = 2 * (self.constants.mu * self.constants.kappa + self.sync_rate)
        if r == 0:
            return self.Vbar0 + 0.5 * self.C1 * np.asarray(s, dtype=float)
        e = _decay(r, s)
        return e * self.Vbar0 + self.C1 * (1 - e) / r

    @property
    def thm2_c1_coefficient(self) -> float:
        """``(eta mu' - kappa mu) / (delta beta lambda2_hat)``; infinite without synchronization."""
        k = self.constants
        gap = k.eta * k.mu_prime - k.kappa * k.mu
        if self.sync_rate > 0:
            return gap / self.sync_rate
        return math.inf if gap > 0 else 0.0

    @property
    def thm2_c1_term(self) -> float:
        return self.thm2_c1_coefficient * self.C1 if self.C1 > 0 else 0.0

    def _thm2_level(self):
        k = self.constants
        if k.kappa == 0:
            return math.inf
        return (self.thm2_c1_term + self.C2) / (2 * k.kappa * k.mu)

    def thm2(self, s):
        k = self.constants
        if k.kappa == 0:
            return np.full(np.shape(s), math.inf)
        e = _decay(2 * k.mu * k.kappa, s)
        level = self._thm2_level()
        grow = np.where(e < 1, level * np.where(e < 1, 1 - e, 1.0), 0.0)
        return e * self.U0 + grow

    def thm3_lower(self, s):
        r = 2 * self.constants.eta * self.constants.mu_prime
        e = _decay(r, s)
        return e * self.F0 + self.C3 / r * (1 - e)

    def thm3_upper(self, s):
        r = 2 * self.constants.kappa * self.constants.mu
        if r == 0:
            return np.full(np.shape(s), math.inf)
        e = _decay(r, s)
        return e * self.F0 + self.C3 / r * (1 - e)

    @property
    def thm1_inf(self) -> float:
        r = 2 * (self.constants.mu * self.constants.kappa + self.sync_rate)
        return self.C1 / r if r > 0 else math.inf

    @property
    def thm2_inf(self) -> float:
        return self._thm2_level()

    @property
    def thm3_inf_lower(self) -> float:
        return self.C3 / (2 * self.constants.eta * self.constants.mu_prime)

    @property
    def thm3_inf_upper(self) -> float:
        r = 2 * self.constants.kappa * self.constants.mu
        return self.C3 / r if r > 0 else math.inf

    def curves(self, s) -> dict:
        s = np.asarray(s, dtype=float)
        return {"s": s.tolist(), "thm1": np.asarray(self.thm1(s)).tolist(),
                "thm2": np.asarray(self.thm2(s)).tolist(),
                "thm3_lower": np.asarray(self.thm3_lower(s)).tolist(),
                "thm3_upper": np.asarray(self.thm3_upper(s)).tolist()}

    def to_dict(self) -> dict:
        return {
            "constants": self.constants.to_dict(),
            "C1": self.C1, "C1_per_node": np.asarray(self.C1_per_node).tolist(),
            "C2": self.C2, "C3": self.C3,
            "delta": self.delta, "beta": self.beta, "beta_eff": self.beta_eff,
            "Vbar0": self.Vbar0, "U0": self.U0, "F0": self.F0,
            "thm2_c1_coefficient": self.thm2_c1_coefficient, "thm2_c1_term": self.thm2_c1_term,
            "thm1_inf": self.thm1_inf, "thm2_inf": self.thm2_inf,
            "thm3_inf_lower": self.thm3_inf_lower, "thm3_inf_upper": self.thm3_inf_upper,
        }


def theorem_bounds(constants: ProblemConstants, C1, C2, C3, Vbar0, U0, F0, delta, beta,
                   beta_convention="proof", C1_per_node=None) -> BoundReport:
    if delta < 0 or beta < 0:
        raise ConfigurationError("delta and beta must be non-negative")
    return BoundReport(constants, float(C1), np.asarray(C1_per_node if C1_per_node is not None else []),
                       float(C2), float(C3), float(delta), float(beta),
                       effective_beta(beta, constants.c, beta_convention),
                       float(Vbar0), float(U0), float(F0))


def bound_report(problem: Problem, topology: Topology, gamma, delta, beta, w0=None,
                 beta_convention="proof", kappa_convention="literal", eta_norm="spectral") -> BoundReport:
    """All constants and bound curves for a problem started from ``w0`` at every node."""
    from .metrics import fl_error

    k = problem_constants(problem, gamma, topology, kappa_convention, eta_norm)
    C1, per = constant_C1(problem, gamma)
    w0 = np.zeros(problem.p) if w0 is None else np.asarray(w0, dtype=float)
    F0 = fl_error(w0, problem.w_star)
    return theorem_bounds(k, C1, constant_C2(problem, gamma), constant_C3(problem, gamma),
                          0.0, F0, F0, delta, beta, beta_convention, per)


@dataclass
class FlComparison:
    """Outcome of the SGN-vs-FL decision rule and every intermediate quantity."""

    mode: str
    decision: str
    condition: float
    N_threshold: float
    delta_bar: float = math.nan
    delta_bar_consistent: float = math.nan
    sigma_bar: float = math.nan
    sigma_ratio: float = math.nan
    threshold: float = math.nan
    threshold_proof: float = math.nan
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return clean_json(asdict(self))


def _delta_bars(constants, C1, C2, C3, beta_eff):
    k = constants
    cond = k.condition
    denom = C3 / (k.mu_prime * k.eta) - C2 / (k.mu * k.kappa)
    if denom <= 0 or cond <= 1:
        return math.inf, math.inf
    literal = (cond - 1) / (beta_eff * k.lambda2 * denom) if k.lambda2 > 0 else math.inf
    consistent = C1 * (cond - 1) / (beta_eff * k.lambda2_hat * denom) if k.lambda2_hat > 0 else math.inf
    return literal, consistent


def fl_comparison(constants: ProblemConstants, C2, C3, delta, beta, alpha_mode="uniform",
                  problem: Problem | None = None, C1=None, beta_convention="proof") -> FlComparison:
    """Decide whether SGN provably beats FL asymptotically for ``delta``.

    ``alpha_mode="uniform"`` applies the equal-weight rule (threshold on N,
    critical penalty ``delta_bar``); ``"inverse-variance"`` applies the
    heterogeneous-variance rule on ``sigma_bar`` and needs ``problem`` with no
    common noise.
    """
    k = constants
    cond = k.condition
    root = math.sqrt(cond) if math.isfinite(cond) else math.inf
    beta_eff = effective_beta(beta, k.c, beta_convention)
    lit, cons = _delta_bars(k, math.nan if C1 is None else C1, C2, C3, beta_eff)
    if alpha_mode == "uniform":
        n = problem.n_nodes if problem is not None else math.sqrt(C3 / C2) if C2 > 0 else math.nan
        out = FlComparison("uniform", "inconclusive", cond, root, lit, cons)
        if n > root and math.isfinite(lit) and delta > lit:
            out.decision = "sgn-wins"
        elif n > root and math.isfinite(lit):
            out.decision = "sgn-wins-for-delta-above"
        if k.lambda2 == 0:
            out.notes.append("graph is disconnected: no finite delta_bar")
        return out
    if alpha_mode != "inverse-variance":
        raise ConfigurationError(f"unknown alpha mode {alpha_mode!r}")
    if problem is None:
        raise ConfigurationError("inverse-variance comparison needs the problem")
    if any(np.any(s.lambda_diag != 0) for s in problem.nodes):
        raise ConfigurationError("inverse-variance comparison requires zero common-noise loadings")
    s2 = np.array([s.sigma2 for s in problem.nodes])
    if np.any(s2 <= 0):
        raise ConfigurationError("inverse-variance comparison needs positive variances")
    wts = problem.mus * np.array([np.linalg.norm(s.X, "fro") ** 2 for s in problem.nodes])
    sigma_bar = float((np.sum(s2**-2 * wts) / wts.sum()) ** -0.25)
    ratio = sigma_bar**2 / s2.min()
    out = FlComparison("inverse-variance", "inconclusive", cond, root, lit, cons,
                       sigma_bar=sigma_bar, sigma_ratio=ratio, threshold=root,
                       threshold_proof=1 / root if root > 0 else math.inf)
    if problem.n_nodes > 1 and ratio > root and math.isfinite(lit):
        out.decision = "sgn-wins" if delta > lit else "sgn-wins-for-delta-above"
    if (ratio > root) != (ratio > out.threshold_proof):
        out.notes.append("statement and proof thresholds disagree on this problem")
    return out


def column_gram_max(problem: Problem) -> float:
    """Largest inner product between two columns of any node's design matrix."""
    return float(max((s.X.T @ s.X).max() for s in problem.nodes))


def lemma2_bound(problem: Problem, gamma, epsilon=None, omega2=None, kappa_convention="literal") -> float:
    """Asymptotic bound ``S2 mu' gamma m omega2 / (kappa mu epsilon^2)``.

    ``epsilon`` defaults to the smallest individual variance and ``omega2`` to
    the largest common-noise loading.
    """
    k = problem_constants(problem, gamma, kappa_convention=kappa_convention)
    eps = min(s.sigma2 for s in problem.nodes) if epsilon is None else epsilon
    om = max(float(np.max(np.abs(s.lambda_diag))) for s in problem.nodes) if omega2 is None else omega2
    if om == 0:
        return 0.0
    if eps <= 0 or k.kappa == 0:
        return math.inf
    return column_gram_max(problem) * k.mu_prime * gamma * problem.m * om / (k.kappa * k.mu * eps**2)


def write_bounds_json(path, report: BoundReport, comparison: FlComparison | None = None,
                      s_grid=None, t_grid=None):
    d = report.to_dict()
    if comparison is not None:
        d["fl_comparison"] = comparison.to_dict()
    if s_grid is not None:
        d["curves"] = report.curves(s_grid)
        if t_grid is not None:
            d["curves"]["t"] = list(map(float, t_grid))
    with open(path, "w") as fh:
        json.dump(clean_json(d), fh, indent=2)


def clean_json(v):
    """Make ``v`` strict JSON: infinities become ``"+inf"``/``"-inf"`` and NaN becomes ``None``."""
    if isinstance(v, dict):
        return {k: clean_json(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [clean_json(x) for x in v]
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v
