"""ABC-rejection model choice from a pre-simulated reference table."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GRID_TOL, Design, PriorModelProbabilities, RngStream, as_stream
from .loss import LossEstimate, estimate_loss_oracle
from .models.epidemic import EpidemicFamily, simulate_epi_paths

TABLE_FORMAT = 1


class OffGrid(ValueError):
    pass


@dataclass(frozen=True)
class AbcConfig:
    retain: int = 200
    j: int = 100

    def __post_init__(self):
        if self.retain < 1 or self.j < 1:
            raise ValueError("retain count and draws per model must be positive")


@dataclass
class ReferenceTable:
    """Prior-predictive trajectories on the full grid, ``R`` rows per model.

    ``theta`` columns are (b1, b2, gamma); ``paths`` holds infected counts
    at every grid time; ``labels`` are 1-based model indices.
    """

    family: str
    grid: np.ndarray
    labels: np.ndarray
    theta: np.ndarray
    paths: np.ndarray
    R: int
    seed: str = ""
    population: int = 50

    @property
    def K(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def columns(self, design: Design) -> np.ndarray:
        """Grid column index of every design time."""
        if len(design.blocks) != 1:
            raise ValueError("reference tables hold one realisation per row; use single-group designs")
        idx = []
        for t in design.blocks[0]:
            hit = np.flatnonzero(np.abs(self.grid - t) <= GRID_TOL)
            if hit.size == 0:
                raise OffGrid(f"design time {t} is not on the reference-table grid")
            idx.append(int(hit[0]))
        return np.array(idx, dtype=np.int64)

    def save(self, path) -> None:
        """Header as ``<path>.json`` and columns as ``<path>.npz``."""
        path = Path(path)
        header = {"format": TABLE_FORMAT, "family": self.family, "grid": self.grid.tolist(), "R": self.R,
                  "seed": self.seed, "population": self.population}
        path.with_suffix(".json").write_text(json.dumps(header, indent=1))
        np.savez_compressed(path.with_suffix(".npz"), labels=self.labels, theta=self.theta, paths=self.paths)

    @classmethod
    def load(cls, path) -> "ReferenceTable":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        if header.get("format") != TABLE_FORMAT:
            raise ValueError(f"unsupported reference-table format {header.get('format')}")
        with np.load(path.with_suffix(".npz")) as z:
            return cls(header["family"], np.array(header["grid"]), z["labels"], z["theta"], z["paths"],
                       header["R"], header["seed"], header["population"])


def build_reference_table(family: EpidemicFamily, grid, R: int, rng: RngStream | int | None = None) -> ReferenceTable:
    if R < 1:
        raise ValueError("need at least one row per model")
    stream = as_stream(rng)
    grid = np.asarray(sorted(grid), dtype=np.float64)
    labels, thetas, paths = [], [], []
    for m in range(1, family.K + 1):
        s = stream.split(m)
        th = family.sample_params(m, R, s.split(0))
        paths.append(simulate_epi_paths(m, th, grid, s.split(1).int_seed(), population=family.population))
        thetas.append(np.column_stack([th.b1, th.b2, th.gamma]))
        labels.append(np.full(R, m, dtype=np.int64))
    # rows are stored in random order so that lowest-index tie breaking
    # does not favour the models simulated first
    order = stream.split(0).generator().permutation(R * family.K)
    return ReferenceTable(family.name, grid, np.concatenate(labels)[order], np.concatenate(thetas)[order],
                          np.concatenate(paths).astype(np.int16)[order], R, str(stream), family.population)


def retained_rows(distances: np.ndarray, r: int) -> np.ndarray:
    """Indices of the ``r`` smallest distances; boundary ties go to the lowest index."""
    n = distances.size
    if not 1 <= r <= n:
        raise ValueError(f"retain count must lie in [1, {n}]")
    if r == n:
        return np.arange(n)
    kth = np.partition(distances, r - 1)[r - 1]
    inside = np.flatnonzero(distances < kth)
    ties = np.flatnonzero(distances == kth)[: r - inside.size]
    return np.sort(np.concatenate([inside, ties]))


def abc_posterior_probs(y, design: Design, table: ReferenceTable, cfg: AbcConfig,
                        _cols: np.ndarray | None = None) -> np.ndarray:
    """Proportion of each model among the ``retain`` rows nearest to ``y``."""
    cols = table.columns(design) if _cols is None else _cols
    y = np.asarray(y, dtype=np.float64)
    if y.shape != cols.shape:
        raise ValueError("data length does not match the design")
    diff = table.paths[:, cols].astype(np.float64) - y
    keep = retained_rows(np.einsum("ij,ij->i", diff, diff), cfg.retain)
    return np.bincount(table.labels[keep] - 1, minlength=table.K) / cfg.retain


class AbcOracle:
    """Feature rows to ABC posterior probabilities, memoised per distinct row."""

    def __init__(self, table: ReferenceTable, design: Design, cfg: AbcConfig):
        self.table = table
        self.design = design
        self.cfg = cfg
        self.cols = table.columns(design)
        self._memo: dict = {}

    def __call__(self, features: np.ndarray) -> np.ndarray:
        out = []
        for row in np.atleast_2d(features):
            key = tuple(row.tolist())
            p = self._memo.get(key)
            if p is None:
                p = abc_posterior_probs(row, self.design, self.table, self.cfg, self.cols)
                self._memo[key] = p
            out.append(p)
        return np.array(out)


def abc_expected_loss(design: Design, family: EpidemicFamily, table: ReferenceTable, cfg: AbcConfig,
                      loss: str = "01", rng: RngStream | int | None = None,
                      priors: PriorModelProbabilities | None = None) -> LossEstimate:
    """Expected loss with ABC probabilities on ``cfg.j`` fresh draws per model."""
    return estimate_loss_oracle(design, family, AbcOracle(table, design, cfg), loss, cfg.j, priors, rng,
                                method="abc")
