"""Posterior modes, Laplace and generalised Gauss-Hermite evidence, and
posterior model probabilities, for log-posteriors over R^p."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import minimize
from scipy.special import logsumexp

from ..core import PriorModelProbabilities

FD_STEP = 1e-4
LogDensity = Callable[[np.ndarray], float]


class EvidenceError(ValueError):
    """Evidence requested from a posterior summary that did not converge."""

    def __init__(self, message: str, summary: "PosteriorSummary | None" = None):
        super().__init__(message)
        self.summary = summary


class ImpossibleData(ValueError):
    pass


@dataclass(frozen=True)
class PosteriorSummary:
    mode: np.ndarray
    cov: np.ndarray
    log_post_at_mode: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvidenceResult:
    log_value: float
    method: str
    n_points: int
    se: float | None = None  # standard error of the evidence (not its log)

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))


def fd_hessian(f: LogDensity, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Hessian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    p = x.size
    H = np.empty((p, p))
    f0 = f(x)
    E = np.eye(p) * h
    for i in range(p):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h**2
        for j in range(i + 1, p):
            H[i, j] = H[j, i] = (
                f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
            ) / (4 * h**2)
    return H


def fd_gradient(f: LogDensity, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    E = np.eye(x.size) * h
    return np.array([(f(x + e) - f(x - e)) / (2 * h) for e in E])


def _nearest_pd(H: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    return (V * np.maximum(w, floor)) @ V.T


def posterior_mode(log_post: LogDensity, starts: list[np.ndarray], *, tol: float = 1e-8,
                   newton_steps: int = 3) -> PosteriorSummary:
    """Maximise ``log_post`` from several starts; curvature by finite differences.

    Nelder-Mead from every start, the best end point polished with Newton
    steps on finite-difference derivatives, then the negative Hessian is
    inverted. A Hessian that is not positive definite is repaired by
    eigenvalue flooring and the summary is marked unconverged.
    """
    def neg(x):
        v = log_post(x)
        return -v if np.isfinite(v) else 1e300

    best = None
    for s in starts:
        res = minimize(neg, np.asarray(s, float), method="Nelder-Mead",
                       options={"xatol": tol, "fatol": tol, "maxiter": 4000, "maxfev": 8000})
        if best is None or res.fun < best.fun:
            best = res
    x = np.asarray(best.x, float)
    fx = log_post(x)
    if not np.isfinite(fx):
        nan = np.full((x.size, x.size), np.nan)
        return PosteriorSummary(x, nan, float(fx), False, {"nelder_mead_success": False, "repaired": False})
    for _ in range(newton_steps):
        H = -fd_hessian(log_post, x)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            break
        step = np.linalg.solve(H, fd_gradient(log_post, x))
        cand = x + step
        fc = log_post(cand)
        if not np.isfinite(fc) or fc < fx:
            break
        x, fx = cand, fc
        if np.max(np.abs(step)) < 1e-10:
            break
    H = -fd_hessian(log_post, x)
    diagnostics = {"nelder_mead_success": bool(best.success), "repaired": False}
    converged = bool(np.isfinite(fx))
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        H = _nearest_pd(H)
        diagnostics["repaired"] = True
        converged = False
    cov = np.linalg.inv(H)
    cov = 0.5 * (cov + cov.T)
    return PosteriorSummary(x, cov, float(fx), converged, diagnostics)


def _require(summary: PosteriorSummary, allow_repaired: bool) -> None:
    if not summary.converged and not allow_repaired:
        raise EvidenceError("posterior mode search did not converge", summary)
    if not np.isfinite(summary.log_post_at_mode):
        raise EvidenceError("log-posterior is not finite at the mode", summary)


def laplace_evidence(summary: PosteriorSummary, *, allow_repaired: bool = False) -> EvidenceResult:
    """log[(2 pi)^(p/2) |Sigma|^(1/2) p(y | mode) p(mode)]."""
    _require(summary, allow_repaired)
    p = summary.mode.size
    _, logdet = np.linalg.slogdet(summary.cov)
    log_z = 0.5 * p * np.log(2 * np.pi) + 0.5 * logdet + summary.log_post_at_mode
    return EvidenceResult(float(log_z), "laplace", 1)


def gauss_hermite_rule(p: int, Q: int) -> tuple[np.ndarray, np.ndarray]:
    """Product-rule nodes (Q^p, p) and weights summing to 1 for N(0, I)."""
    if Q < 2:
        raise ValueError("need at least two nodes per dimension")
    x, w = hermegauss(Q)
    w = w / np.sqrt(2 * np.pi)
    grids = np.meshgrid(*([x] * p), indexing="ij")
    wgrids = np.meshgrid(*([w] * p), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    return nodes, weights


def gh_evidence(summary: PosteriorSummary, log_post: LogDensity, Q: int = 30, *,
                allow_repaired: bool = False) -> EvidenceResult:
    """Sum of w_i f(theta_i) / N(theta_i | mode, 2 Sigma) over the mapped rule."""
    _require(summary, allow_repaired)
    p = summary.mode.size
    z, w = gauss_hermite_rule(p, Q)
    L = np.linalg.cholesky(2.0 * summary.cov)
    theta = summary.mode + z @ L.T
    _, logdet = np.linalg.slogdet(2.0 * summary.cov)
    log_kernel = -0.5 * np.sum(z * z, axis=1) - 0.5 * p * np.log(2 * np.pi) - 0.5 * logdet
    log_f = np.array([log_post(t) for t in theta])
    terms = np.log(w) + log_f - log_kernel
    return EvidenceResult(float(logsumexp(terms)), "gauss-hermite", int(w.size))


def posterior_model_probs(log_evidences, priors: PriorModelProbabilities | None = None) -> np.ndarray:
    """p(m | y) from log evidences and prior model probabilities."""
    le = np.asarray(log_evidences, dtype=float)
    p = (priors or PriorModelProbabilities.uniform(le.size)).as_array()
    if p.size != le.size:
        raise ValueError("one log evidence per model is required")
    with np.errstate(divide="ignore"):
        a = le + np.log(p)
    if not np.any(np.isfinite(a)):
        raise ImpossibleData("the data have zero probability under every model")
    out = np.exp(a - logsumexp(a))
    return out / out.sum()
