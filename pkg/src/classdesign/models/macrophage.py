"""Intracellular bacteria in macrophages: three per-cell CTMCs observed
through an infected-cell count and a bacteria-per-cell histogram."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..core import Design, DesignSpace, PriorModelProbabilities, RngStream, make_space
from . import gillespie
from .base import Family

N_CELLS = 200
K_PLUS = 10
SAMPLE_CAP_FACTOR = 200
POP_CAP = 500

PARAM_NAMES = ("phi", "a", "b", "d", "delta", "eps", "p", "q")


class MacroModel(IntEnum):
    HETEROGENEOUS_BACTERIA = 1
    HETEROGENEOUS_CELLS = 2
    HOMOGENEOUS = 3


def _sym(lower: list[list[float]]) -> np.ndarray:
    n = len(lower)
    m = np.zeros((n, n))
    for i, row in enumerate(lower):
        m[i, : len(row)] = row
    return np.tril(m) + np.tril(m, -1).T


@dataclass(frozen=True)
class TruncatedNormalPrior:
    names: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray
    upper_one: tuple[str, ...] = ()

    def chol(self) -> tuple[np.ndarray, float]:
        """Cholesky factor, with the smallest diagonal jitter (<= 1e-8) needed."""
        for jitter in (0.0, 1e-12, 1e-10, 1e-8):
            try:
                return np.linalg.cholesky(self.cov + jitter * np.eye(len(self.names))), jitter
            except np.linalg.LinAlgError:
                continue
        raise ValueError("prior covariance is not positive definite")

    def sample(self, g: np.random.Generator, size: int, max_proposals: int = 10**7) -> np.ndarray:
        L, _ = self.chol()
        upper = np.array([n in self.upper_one for n in self.names])
        out = np.empty((size, len(self.names)))
        got = 0
        proposed = 0
        batch = max(64, 2 * size)
        while got < size:
            z = self.mean + g.standard_normal((batch, len(self.names))) @ L.T
            ok = np.all(z >= 0, axis=1) & np.all(~upper | (z <= 1), axis=1)
            take = z[ok][: size - got]
            out[got: got + len(take)] = take
            got += len(take)
            proposed += batch
            if proposed >= max_proposals and got < proposed * 1e-6:
                raise ValueError("truncated-normal prior accepts fewer than 1e-6 of proposals")
        return out


MACRO_PRIORS = {
    MacroModel.HETEROGENEOUS_BACTERIA: TruncatedNormalPrior(
        ("a", "b", "d", "delta", "eps", "p", "phi"),
        np.array([6.46, 1.54, 0.073, 2.529e-10, 0.035, 0.097, 0.25]),
        _sym([
            [32.8310],
            [0.6224, 0.0696],
            [0.1991, -0.0017, 0.0487],
            [0.1258, 0.0218, -0.0164, 0.0153],
            [0.0166, 0.0048, -0.0069, 0.0052, 0.0024],
            [0.2142, 0.0252, -0.0061, 0.0102, 0.0039, 0.0192],
            [-0.0101, 0.0001, -0.0029, 0.0018, 0.0011, 0.0018, 0.0030],
        ]),
        upper_one=("p",),
    ),
    MacroModel.HETEROGENEOUS_CELLS: TruncatedNormalPrior(
        ("a", "b", "d", "eps", "phi", "q"),
        np.array([8.54221, 1.450254, 0.09111, 0.03, 0.25948, 0.266837]),
        _sym([
            [33.5250],
            [1.1380, 0.3586],
            [0.8252, -0.1213, 0.0952],
            [0.0253, 0.0077, -0.0023, 0.1067],
            [-0.1471, -0.0511, 0.0197, -0.0001, 0.0355],
            [0.9048, 0.1962, -0.0658, 0.0097, -0.0284, 0.2765],
        ]),
        upper_one=("q",),
    ),
    MacroModel.HOMOGENEOUS: TruncatedNormalPrior(
        ("a", "b", "d", "phi"),
        np.array([0.8161965, 0.52672325, 0.20740975, 0.3203258]),
        _sym([
            [0.7518],
            [0.1172, 0.0506],
            [0.0720, -0.0090, 0.0228],
            [0.0008, -0.0106, 0.0100, 0.0287],
        ]),
    ),
}


def sample_macro_prior(model: MacroModel | int, rng: RngStream | np.random.Generator,
                       size: int = 1) -> np.ndarray:
    """Parameter rows in ``PARAM_NAMES`` order; parameters outside the model are 0."""
    prior = MACRO_PRIORS[MacroModel(model)]
    g = rng.generator() if isinstance(rng, RngStream) else rng
    draws = prior.sample(g, size)
    theta = np.zeros((size, len(PARAM_NAMES)))
    for j, name in enumerate(prior.names):
        theta[:, PARAM_NAMES.index(name)] = draws[:, j]
    return theta


def sample_size(n_times: int, n_cells: int = N_CELLS) -> int:
    """Cells per sample when ``n_cells`` are split over two samples per time."""
    return n_cells // (2 * n_times)


@dataclass(frozen=True)
class MacroSettings:
    k_plus: int = K_PLUS
    n_cells: int = N_CELLS
    sample_cap_factor: int = SAMPLE_CAP_FACTOR
    pop_cap: int = POP_CAP
    # "exposure-end": observation times count from the end of exposure;
    # "start": they count from the start of the experiment
    time_origin: str = "exposure-end"

    def end_times(self, t_exp: float, t_obs) -> np.ndarray:
        t_obs = np.asarray(t_obs, dtype=np.float64)
        if self.time_origin == "exposure-end":
            return t_exp + t_obs
        if self.time_origin == "start":
            return t_obs.copy()
        raise ValueError(f"unknown time origin {self.time_origin!r}")


@dataclass(frozen=True)
class MacroObservation:
    features: np.ndarray  # (J, n * (1 + K+)): per time [c, h_1..h_K+]
    attained: np.ndarray  # (J, n) infected-sample sizes reached
    sample_size: int


def simulate_macro(model: MacroModel | int, theta: np.ndarray, design: Design, rng: RngStream,
                   settings: MacroSettings = MacroSettings()) -> MacroObservation:
    if len(design.blocks) != 2 or len(design.blocks[0]) != 1:
        raise ValueError("a macrophage design is (t_exp; t_obs...)")
    t_exp = design.blocks[0][0]
    t_obs = design.blocks[1]
    S = sample_size(len(t_obs), settings.n_cells)
    theta = np.ascontiguousarray(np.atleast_2d(theta), dtype=np.float64)
    feats, attained = gillespie.macro_dataset(
        int(model), theta, float(t_exp), settings.end_times(t_exp, t_obs), S,
        settings.k_plus, settings.sample_cap_factor * S, settings.pop_cap, rng.int_seed(),
    )
    return MacroObservation(feats, attained, S)


class MacrophageFamily(Family):
    def __init__(self, settings: MacroSettings = MacroSettings()):
        self.name = "macro"
        self.model_names = ["heterogeneous-bacteria", "heterogeneous-cells", "homogeneous"]
        self.priors = PriorModelProbabilities.uniform(3)
        self.settings = settings

    def default_space(self, n_points: int = 1) -> DesignSpace:
        return make_space("macro", n_points)

    def simulate(self, model: int, design: Design, count: int, stream: RngStream) -> np.ndarray:
        theta = sample_macro_prior(model, stream.split(0).generator(), count)
        obs = simulate_macro(model, theta, design, stream.split(1), self.settings)
        return obs.features.astype(np.float64)
