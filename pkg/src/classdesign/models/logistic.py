"""Sixteen-model logistic regression with fixed or random group effects."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import expit

from ..core import Design, DesignSpace, PriorModelProbabilities, RngStream, make_space
from .base import Family

BETA_BOX = np.array([[-3.0, 3.0], [4.0, 10.0], [5.0, 11.0], [-6.0, 0.0], [-2.5, 3.5]])
ZETA_UPPER = np.array([3.0, 3.0, 3.0, 1.0, 1.0])
GROUP_SIZE = 6
N_PREDICTORS = 4

# model m (1-based) includes predictor a iff INCLUSION[m - 1, a] == 1
INCLUSION = np.array(list(itertools.product([0, 1], repeat=N_PREDICTORS)), dtype=np.int64)


@dataclass(frozen=True)
class LogisticModel:
    inclusion: tuple[int, ...]
    structure: str = "FE"  # or "RE"

    @property
    def index(self) -> int:
        """1-based model label."""
        return 1 + int(np.flatnonzero((INCLUSION == self.inclusion).all(axis=1))[0])

    @classmethod
    def from_index(cls, m: int, structure: str = "FE") -> "LogisticModel":
        return cls(tuple(int(v) for v in INCLUSION[m - 1]), structure)


@dataclass(frozen=True)
class LogisticParams:
    beta: np.ndarray  # (J, 5)
    zeta: np.ndarray | None = None  # (J, 5), RE only
    gamma: np.ndarray | None = None  # (J, G, 5), RE only


def model_prior(kind: str = "equal") -> PriorModelProbabilities:
    """``equal`` or ``multiplicity``: 1 / (5 * C(4, number of predictors))."""
    if kind == "equal":
        return PriorModelProbabilities.uniform(len(INCLUSION))
    if kind == "multiplicity":
        return PriorModelProbabilities.normalized(
            [1.0 / (5 * comb(N_PREDICTORS, int(v.sum()))) for v in INCLUSION]
        )
    raise ValueError(f"unknown model prior {kind!r}")


def sample_logistic_params(structure: str, size: int, n_groups: int, g: np.random.Generator) -> LogisticParams:
    lo, hi = BETA_BOX[:, 0], BETA_BOX[:, 1]
    beta = g.uniform(lo, hi, size=(size, 5))
    if structure == "FE":
        return LogisticParams(beta)
    if structure != "RE":
        raise ValueError(f"unknown structure {structure!r}")
    # density 2 (U - z) / U^2 on (0, U): triangular with its mode at 0
    zeta = ZETA_UPPER * (1.0 - np.sqrt(g.random((size, 5))))
    gamma = g.uniform(-1.0, 1.0, size=(size, n_groups, 5)) * zeta[:, None, :]
    return LogisticParams(beta, zeta, gamma)


def sample_logistic_model_and_params(structure: str, prior: str, rng: np.random.Generator,
                                     n_groups: int = 1) -> tuple[LogisticModel, LogisticParams]:
    probs = model_prior(prior).as_array()
    m = 1 + int(rng.choice(len(probs), p=probs))
    return LogisticModel.from_index(m, structure), sample_logistic_params(structure, 1, n_groups, rng)


def design_matrix(design: Design) -> np.ndarray:
    """(n, 4) covariates from the observation-major flat design."""
    flat = np.asarray(design.flat(), dtype=np.float64)
    if flat.size % N_PREDICTORS:
        raise ValueError("a logistic design needs 4 covariates per observation")
    return flat.reshape(-1, N_PREDICTORS)


def linear_predictor(model: LogisticModel, theta: LogisticParams, X: np.ndarray,
                     group_size: int = GROUP_SIZE) -> np.ndarray:
    v = np.asarray(model.inclusion, dtype=np.float64)
    coef = theta.beta[:, 1:] * v  # (J, 4)
    eta = theta.beta[:, :1] + coef @ X.T  # (J, n)
    if model.structure == "RE" and theta.gamma is not None:
        group = np.arange(X.shape[0]) // group_size
        gam = theta.gamma[:, group, :]  # (J, n, 5)
        eta = eta + gam[:, :, 0] + np.einsum("jna,na,a->jn", gam[:, :, 1:], X, v)
    return eta


def simulate_logistic(model: LogisticModel, theta: LogisticParams, design: Design,
                      g: np.random.Generator, group_size: int = GROUP_SIZE) -> np.ndarray:
    X = design_matrix(design)
    p = expit(linear_predictor(model, theta, X, group_size))
    return (g.random(p.shape) < p).astype(np.int64)


class LogisticFamily(Family):
    """All 16 predictor subsets under one structure and one model prior."""

    def __init__(self, structure: str = "FE", prior: str = "equal", group_size: int = GROUP_SIZE):
        if structure not in ("FE", "RE"):
            raise ValueError(f"unknown structure {structure!r}")
        self.structure = structure
        self.prior_kind = prior
        self.group_size = group_size
        self.name = f"logistic-{structure.lower()}-{prior}"
        self.model_names = ["v" + "".join(map(str, v)) for v in INCLUSION]
        self.priors = model_prior(prior)

    def default_space(self, n_points: int = 6) -> DesignSpace:
        if self.structure == "FE":
            return make_space(f"logistic-fe-n{n_points}")
        return make_space(f"logistic-re-G{max(1, n_points // self.group_size)}")

    def simulate(self, model: int, design: Design, count: int, stream: RngStream) -> np.ndarray:
        n = design_matrix(design).shape[0]
        n_groups = -(-n // self.group_size)
        theta = sample_logistic_params(self.structure, count, n_groups, stream.split(0).generator())
        lm = LogisticModel.from_index(model, self.structure)
        y = simulate_logistic(lm, theta, design, stream.split(1).generator(), self.group_size)
        return y.astype(np.float64)
