"""Importance-sampling evidence for fixed-effects logistic models, using the
parameter prior as the proposal."""

from __future__ import annotations

import numpy as np
from scipy.special import log_expit, logsumexp

from ..core import Design, PriorModelProbabilities, RngStream
from ..models.logistic import INCLUSION, LogisticModel, design_matrix, linear_predictor, sample_logistic_params
from .evidence import EvidenceResult, posterior_model_probs


def logistic_log_lik(model: LogisticModel, theta, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Log-likelihood of binary ``y`` for every parameter draw in ``theta``."""
    eta = linear_predictor(model, theta, X)
    return (y * log_expit(eta) + (1 - y) * log_expit(-eta)).sum(axis=1)


def is_evidence_logistic(model: LogisticModel, y, design: Design, n_draws: int,
                         rng: RngStream | np.random.Generator) -> EvidenceResult:
    """(1/S) sum_s p(y | theta_s) with theta_s from the prior; SE stored."""
    if model.structure != "FE":
        raise ValueError("importance-sampling evidence is only offered for fixed effects")
    g = rng.generator() if isinstance(rng, RngStream) else rng
    y = np.asarray(y, dtype=np.float64)
    X = design_matrix(design) if y.size else np.zeros((0, 4))
    if y.size == 0:
        return EvidenceResult(0.0, "importance-sampling", n_draws, 0.0)
    theta = sample_logistic_params("FE", n_draws, 1, g)
    ll = logistic_log_lik(model, theta, X, y)
    log_z = float(logsumexp(ll) - np.log(n_draws))
    w = np.exp(ll - log_z)
    se = float(np.exp(log_z) * w.std(ddof=1) / np.sqrt(n_draws)) if n_draws > 1 else float("nan")
    return EvidenceResult(log_z, "importance-sampling", n_draws, se)


class LogisticISOracle:
    """Posterior probabilities of the 16 fixed-effects models for binary responses."""

    def __init__(self, design: Design, priors: PriorModelProbabilities, n_draws: int = 100_000,
                 rng: RngStream | int = 0):
        self.design = design
        self.priors = priors
        self.n_draws = n_draws
        self.stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
        self._memo: dict = {}

    def probs_for(self, y) -> np.ndarray:
        key = tuple(int(v) for v in y)
        p = self._memo.get(key)
        if p is None:
            le = [
                is_evidence_logistic(LogisticModel.from_index(m), np.array(key), self.design, self.n_draws,
                                     self.stream.split(m)).log_value
                for m in range(1, len(INCLUSION) + 1)
            ]
            p = posterior_model_probs(le, self.priors)
            self._memo[key] = p
        return p

    def __call__(self, responses: np.ndarray) -> np.ndarray:
        return np.array([self.probs_for(row) for row in np.atleast_2d(responses)])
