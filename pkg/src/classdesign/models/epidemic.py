"""Epidemic CTMCs in a closed population: death, SI, SEI and SEI2."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..core import Design, DesignSpace, PriorModelProbabilities, RngStream, make_space, validate_design
from . import gillespie
from .base import Family

POPULATION = 50
HORIZON = 10.0


class EpiModel(IntEnum):
    DEATH = 1
    SI = 2
    SEI = 3
    SEI2 = 4


@dataclass(frozen=True)
class LogNormal:
    mean: float  # location of log X
    sd: float

    def draw(self, g: np.random.Generator, size: int) -> np.ndarray:
        return np.exp(g.normal(self.mean, self.sd, size))


@dataclass(frozen=True)
class Exponential:
    rate: float

    def draw(self, g: np.random.Generator, size: int) -> np.ndarray:
        return g.exponential(1.0 / self.rate, size)


# Second arguments are log-scale standard deviations.
EPI4_PRIORS = {
    EpiModel.DEATH: {"b1": LogNormal(-0.48, 0.09)},
    EpiModel.SI: {"b1": LogNormal(-1.1, 0.16), "b2": LogNormal(-4.5, 0.4)},
    EpiModel.SEI: {"b1": LogNormal(-0.54, 0.15), "gamma": Exponential(0.01)},
    EpiModel.SEI2: {
        "b1": LogNormal(-1.34, 0.41),
        "b2": LogNormal(-4.26, 0.25),
        "gamma": Exponential(0.01),
    },
}

EPI2_PRIORS = {
    EpiModel.DEATH: {"b1": LogNormal(-0.48, 0.3)},
    EpiModel.SI: {"b1": LogNormal(-1.1, 0.4), "b2": LogNormal(-4.5, 0.4**0.5)},
}


@dataclass(frozen=True)
class EpiParams:
    """Rates per day; absent rates are zero."""

    b1: np.ndarray
    b2: np.ndarray
    gamma: np.ndarray

    def __len__(self):
        return int(self.b1.shape[0])


def sample_epi_prior(model: EpiModel | int, rng: RngStream | np.random.Generator, size: int = 1,
                     priors: dict | None = None) -> EpiParams:
    model = EpiModel(model)
    table = (priors or EPI4_PRIORS)[model]
    g = rng.generator() if isinstance(rng, RngStream) else rng
    cols = {}
    for name in ("b1", "b2", "gamma"):
        cols[name] = table[name].draw(g, size) if name in table else np.zeros(size)
    return EpiParams(**cols)


def simulate_epi_paths(model: EpiModel | int, theta: EpiParams, times, seed: int,
                       horizon: float = HORIZON, population: int = POPULATION) -> np.ndarray:
    """Infected counts (rows: parameter draws, columns: sorted ``times``)."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    if times.size and (times.min() < 0 or np.any(np.diff(times) < 0)):
        raise ValueError("record times must be sorted and non-negative")
    horizon = max(horizon, float(times.max()) if times.size else 0.0)
    return gillespie.epi_paths(
        int(model), np.ascontiguousarray(theta.b1, dtype=np.float64),
        np.ascontiguousarray(theta.b2, dtype=np.float64),
        np.ascontiguousarray(theta.gamma, dtype=np.float64),
        population, times, horizon, int(seed),
    )


def simulate_epi(model: EpiModel | int, theta: EpiParams, design: Design, rng: RngStream,
                 space: DesignSpace | None = None, population: int = POPULATION) -> np.ndarray:
    """Infected counts at every design time, one independent path per group.

    Row ``j`` uses parameter draw ``j`` for all groups (realisations) and
    concatenates the groups' counts.
    """
    if space is not None:
        report = validate_design(design, space)
        if not report.ok:
            raise ValueError(f"invalid design: {'; '.join(report.violations)}")
    parts = [
        simulate_epi_paths(model, theta, block, rng.split(g).int_seed(), population=population)
        for g, block in enumerate(design.blocks)
    ]
    if not parts:
        return np.zeros((len(theta), 0), dtype=np.int64)
    return np.concatenate(parts, axis=1)


class EpidemicFamily(Family):
    """The four-model family (``epi4``) or the death-vs-SI family (``epi2``)."""

    def __init__(self, variant: str = "epi4", population: int = POPULATION):
        if variant not in ("epi4", "epi2"):
            raise KeyError(f"unknown epidemic variant {variant!r}")
        self.name = variant
        self.models = list(EpiModel)[: 4 if variant == "epi4" else 2]
        self.model_names = ["death", "SI", "SEI", "SEI2"][: len(self.models)]
        self.priors = PriorModelProbabilities.uniform(len(self.models))
        self.param_priors = EPI4_PRIORS if variant == "epi4" else EPI2_PRIORS
        self.population = population

    def default_space(self, n_points: int = 1) -> DesignSpace:
        if self.name == "epi4":
            return make_space("epi4", n_points)
        return make_space(f"epi2-q1-nd{n_points}")

    def sample_params(self, model: int, count: int, stream: RngStream) -> EpiParams:
        return sample_epi_prior(model, stream.generator(), count, self.param_priors)

    def simulate(self, model: int, design: Design, count: int, stream: RngStream) -> np.ndarray:
        theta = self.sample_params(model, count, stream.split(0))
        return simulate_epi(model, theta, design, stream.split(1), population=self.population).astype(np.float64)
