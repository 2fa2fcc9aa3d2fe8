"""Exact likelihoods of the death and SI models observed at discrete times,
with Laplace and Gauss-Hermite evidence over log-rates."""

from __future__ import annotations

import numpy as np
from scipy.stats import binom, multivariate_normal

from ..core import Design, PriorModelProbabilities
from ..models.epidemic import EPI2_PRIORS, POPULATION, EpiModel
from .evidence import (
    EvidenceResult,
    PosteriorSummary,
    gh_evidence,
    laplace_evidence,
    posterior_mode,
    posterior_model_probs,
)
from .expm import matrix_exp, si_generator


def death_transition_prob(k_from: int, k_to: int, b1: float, dt: float) -> float:
    """P(S moves from k_from to k_to in time dt) under the death model."""
    if k_to > k_from:
        return 0.0
    return float(binom.pmf(k_to, k_from, np.exp(-b1 * dt)))


class EpiLikelihood:
    """Likelihood of susceptible counts for one model at one design.

    Parameters are log-rates: (log b1) for the death model and
    (log b1, log b2) for the SI model. Data are one susceptible-count
    sequence per design group, each starting from S = N at time 0.
    Transition matrices are cached per (rates, gap), so an instance should
    not be shared between threads.
    """

    def __init__(self, model: EpiModel | int, design: Design, population: int = POPULATION,
                 priors: dict | None = None):
        self.model = EpiModel(model)
        if self.model not in (EpiModel.DEATH, EpiModel.SI):
            raise ValueError("exact likelihoods are available for the death and SI models only")
        self.design = design
        self.N = population
        table = (priors or EPI2_PRIORS)[self.model]
        names = ["b1"] if self.model == EpiModel.DEATH else ["b1", "b2"]
        self.prior_mean = np.array([table[n].mean for n in names])
        self.prior_sd = np.array([table[n].sd for n in names])
        self._prior = multivariate_normal(self.prior_mean, np.diag(self.prior_sd**2))
        self._gaps = [np.diff(np.concatenate([[0.0], b])) for b in design.blocks]
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return self.prior_mean.size

    def split_data(self, S) -> list[np.ndarray]:
        S = np.asarray(S, dtype=np.int64)
        out, i = [], 0
        for b in self.design.blocks:
            out.append(S[i: i + len(b)])
            i += len(b)
        if i != S.size:
            raise ValueError("data length does not match the design")
        return out

    def _transition(self, b1: float, b2: float, dt: float) -> np.ndarray:
        key = (b1, b2, dt)
        P = self._cache.get(key)
        if P is None:
            P = matrix_exp(si_generator(b1, b2, self.N), dt)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = P
        return P

    def log_likelihood(self, log_rates, S) -> float:
        rates = np.exp(np.asarray(log_rates, dtype=float))
        b1 = float(rates[0])
        b2 = float(rates[1]) if rates.size > 1 else 0.0
        total = 0.0
        for seq, gaps in zip(self.split_data(S), self._gaps):
            prev = self.N
            for s, dt in zip(seq, gaps):
                if s > prev or s < 0:
                    return -np.inf
                if self.model == EpiModel.DEATH:
                    lp = binom.logpmf(s, prev, np.exp(-b1 * dt))
                else:
                    p = self._transition(b1, b2, float(dt))[prev, s]
                    lp = np.log(p) if p > 0 else -np.inf
                total += lp
                prev = s
                if not np.isfinite(total):
                    return -np.inf
        return float(total)

    def log_prior(self, log_rates) -> float:
        return float(self._prior.logpdf(np.asarray(log_rates, dtype=float)))

    def log_posterior(self, S):
        """Unnormalised log posterior as a function of the log-rates."""
        S = np.asarray(S, dtype=np.int64)
        return lambda th: self.log_likelihood(th, S) + self.log_prior(th)

    def starts(self) -> list[np.ndarray]:
        return [self.prior_mean + k * self.prior_sd for k in (0.0, -1.0, 1.0, -2.0, 2.0)]

    def summary(self, S) -> PosteriorSummary:
        return posterior_mode(self.log_posterior(S), self.starts())

    def laplace(self, S, *, allow_repaired: bool = False) -> EvidenceResult:
        return laplace_evidence(self.summary(S), allow_repaired=allow_repaired)

    def gauss_hermite(self, S, Q: int = 30, *, allow_repaired: bool = False) -> EvidenceResult:
        return gh_evidence(self.summary(S), self.log_posterior(S), Q, allow_repaired=allow_repaired)


class EpiBayesOracle:
    """Posterior model probabilities of death vs SI from infected counts.

    Results are memoised per distinct data row, which makes designs with
    few observations cheap: a single time point has at most N + 1 outcomes.
    """

    def __init__(self, design: Design, method: str = "laplace", Q: int = 30,
                 priors: PriorModelProbabilities | None = None, population: int = POPULATION):
        if method not in ("laplace", "gauss-hermite"):
            raise ValueError(f"unknown evidence method {method!r}")
        self.likelihoods = [EpiLikelihood(m, design, population) for m in (EpiModel.DEATH, EpiModel.SI)]
        self.method = method
        self.Q = Q
        self.priors = priors or PriorModelProbabilities.uniform(2)
        self.N = population
        self._memo: dict = {}

    def log_evidences(self, S) -> np.ndarray:
        out = []
        for lik in self.likelihoods:
            if self.method == "laplace":
                r = lik.laplace(S, allow_repaired=True)
            else:
                r = lik.gauss_hermite(S, self.Q, allow_repaired=True)
            out.append(r.log_value)
        return np.array(out)

    def probs_for_counts(self, S) -> np.ndarray:
        key = tuple(int(s) for s in S)
        p = self._memo.get(key)
        if p is None:
            p = posterior_model_probs(self.log_evidences(np.array(key)), self.priors)
            self._memo[key] = p
        return p

    def __call__(self, infected: np.ndarray) -> np.ndarray:
        infected = np.atleast_2d(np.asarray(infected))
        S = self.N - np.rint(infected).astype(np.int64)
        return np.array([self.probs_for_counts(row) for row in S])
