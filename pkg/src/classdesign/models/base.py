"""The model-family interface and joint prior-predictive dataset generation."""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..core import (
    Design,
    DesignSpace,
    LabeledDataset,
    PriorModelProbabilities,
    RngStream,
    as_stream,
    make_space,
)


class Family(ABC):
    """K candidate models sharing a design space and a feature encoding.

    ``simulate(m, design, count, stream)`` draws ``count`` parameter vectors
    from model ``m``'s prior (1-based) and returns one feature row per draw.
    """

    name: str
    model_names: list[str]
    priors: PriorModelProbabilities

    @property
    def K(self) -> int:
        return len(self.model_names)

    @abstractmethod
    def default_space(self, n_points: int = 1) -> DesignSpace: ...

    @abstractmethod
    def simulate(self, model: int, design: Design, count: int, stream: RngStream) -> np.ndarray: ...


class ConstantFamily(Family):
    """K models that all emit the same constant data; no design can separate them."""

    def __init__(self, K: int = 4, value: float = 1.0):
        self.name = f"const-K{K}"
        self.model_names = [f"model {k + 1}" for k in range(K)]
        self.priors = PriorModelProbabilities.uniform(K)
        self.value = value

    def default_space(self, n_points: int = 1) -> DesignSpace:
        return make_space(f"const-n{n_points}")

    def simulate(self, model: int, design: Design, count: int, stream: RngStream) -> np.ndarray:
        return np.full((count, len(design.flat())), self.value)


def generate_labeled_set(
    family: Family,
    design: Design,
    size: int,
    priors: PriorModelProbabilities | None = None,
    rng: RngStream | int | None = None,
    *,
    mode: str = "stratified",
) -> LabeledDataset:
    """Draw rows from the joint prior predictive of (model, data) at ``design``.

    ``stratified`` gives exactly ``size`` rows per model. ``proportional``
    gives ``size`` rows in total with labels drawn i.i.d. from the priors.
    Model ``m`` always simulates from child stream ``m`` of ``rng``.
    """
    if size < 0:
        raise ValueError("dataset size must be non-negative")
    stream = as_stream(rng)
    priors = priors or family.priors
    if priors.K != family.K:
        raise ValueError("model priors do not match the family")
    if mode == "stratified":
        counts = np.full(family.K, size, dtype=np.int64)
    elif mode == "proportional":
        counts = stream.split(0).generator().multinomial(size, priors.as_array())
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    n_feat = None
    labels, blocks = [], []
    for m in range(1, family.K + 1):
        if counts[m - 1] == 0:
            continue
        X = family.simulate(m, design, int(counts[m - 1]), stream.split(m))
        n_feat = X.shape[1]
        blocks.append(X)
        labels.append(np.full(X.shape[0], m, dtype=np.int64))
    if not blocks:
        width = family.simulate(1, design, 0, stream.split(1)).shape[1]
        return LabeledDataset(np.zeros(0, np.int64), np.zeros((0, width)), family.K, design,
                              family.name, str(stream), {"mode": mode})
    return LabeledDataset(
        np.concatenate(labels), np.concatenate(blocks).reshape(-1, n_feat), family.K, design,
        family.name, str(stream), {"mode": mode},
    )
