"""Shared domain types: designs, design spaces, model priors, labeled datasets
and reproducible random streams."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GRID_TOL = 1e-9


class DesignError(ValueError):
    """Base class for invalid designs."""


class GridViolation(DesignError):
    pass


class PolicyViolation(DesignError):
    pass


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A reproducible, splittable random stream.

    The stream is identified by a 64-bit ``seed`` and a path of stream
    indices. Children are derived through ``numpy.random.SeedSequence``
    spawn keys and drive a counter-based Philox generator, so distinct paths
    give independent sequences by construction.
    """

    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if any(int(k) < 0 or int(k) >= 2**64 for k in self.key):
            raise ValueError("stream indices must be 64-bit unsigned integers")

    @property
    def index(self) -> int:
        return self.key[-1] if self.key else 0

    def split(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(index),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))

    def int_seed(self) -> int:
        """A 63-bit integer seed for code that manages its own generator."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key + (2**63,))
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def __str__(self):
        path = ".".join(str(k) for k in self.key)
        return f"{self.seed}/{path}" if path else str(self.seed)


def split_rng(parent: RngStream, index: int) -> RngStream:
    return parent.split(index)


def as_stream(rng: RngStream | int | None) -> RngStream:
    if rng is None:
        return RngStream(0)
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


# ---------------------------------------------------------------------------
# Design spaces and designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    """One coordinate group of a design space.

    ``ordered`` groups hold observation times and are kept sorted;
    unordered groups hold covariate settings and are left as given.
    """

    grid: tuple[float, ...]
    size: int
    ordered: bool = True
    distinct: bool = True
    label: str = "t"

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ValueError("grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.size < 0:
            raise ValueError("group size must be non-negative")
        if self.distinct and self.size > len(grid):
            raise ValueError("distinct group larger than its grid")

    def grid_index(self, value: float) -> int | None:
        arr = np.asarray(self.grid)
        i = int(np.searchsorted(arr, value - GRID_TOL))
        if i < len(arr) and abs(arr[i] - value) <= GRID_TOL:
            return i
        return None


@dataclass(frozen=True)
class DesignSpace:
    name: str
    groups: tuple[GroupSpec, ...]

    @property
    def n_coords(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def policy(self) -> str:
        return "distinct" if all(g.distinct for g in self.groups) else "repeats"

    def coordinate_map(self) -> list[tuple[int, int]]:
        return [(gi, j) for gi, g in enumerate(self.groups) for j in range(g.size)]

    def random_design(self, rng: np.random.Generator) -> "Design":
        """Uniform grid choice per coordinate, resampled until policy-valid."""
        blocks = []
        for g in self.groups:
            while True:
                vals = rng.choice(np.asarray(g.grid), size=g.size, replace=True)
                if not g.distinct or len(set(vals.tolist())) == g.size:
                    break
            blocks.append(tuple(float(v) for v in vals))
        return canonicalize_design(Design(tuple(blocks)), self)

    def with_points(self, design: "Design") -> "DesignSpace":
        """A copy whose grids also contain every coordinate of ``design``."""
        groups = []
        for g, block in zip(self.groups, design.blocks):
            grid = sorted(set(g.grid) | {float(v) for v in block})
            merged = []
            for v in grid:
                if not merged or v - merged[-1] > GRID_TOL:
                    merged.append(v)
            groups.append(GroupSpec(tuple(merged), g.size, g.ordered, g.distinct, g.label))
        return DesignSpace(self.name, tuple(groups))


@dataclass(frozen=True)
class Design:
    blocks: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "blocks", tuple(tuple(float(v) for v in b) for b in self.blocks)
        )

    @classmethod
    def of(cls, *blocks: Iterable[float]) -> "Design":
        return cls(tuple(tuple(b) for b in blocks))

    def flat(self) -> tuple[float, ...]:
        return tuple(v for b in self.blocks for v in b)

    def replace(self, group: int, pos: int, value: float) -> "Design":
        blocks = [list(b) for b in self.blocks]
        blocks[group][pos] = float(value)
        return Design(tuple(tuple(b) for b in blocks))

    def to_record(self, space: str | None = None, seed: int | None = None) -> dict:
        rec: dict = {"blocks": [list(b) for b in self.blocks]}
        if space is not None:
            rec["space"] = space
        if seed is not None:
            rec["seed"] = seed
        return rec

    @classmethod
    def from_record(cls, rec: dict | str) -> "Design":
        if isinstance(rec, str):
            rec = json.loads(rec)
        return cls(tuple(tuple(b) for b in rec["blocks"]))

    def __str__(self):
        return "; ".join(", ".join(f"{v:g}" for v in b) for b in self.blocks)


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_design(d: Design, space: DesignSpace) -> ValidityReport:
    problems: list[str] = []
    if len(d.blocks) != len(space.groups):
        return ValidityReport((f"structure: expected {len(space.groups)} groups, got {len(d.blocks)}",))
    for gi, (g, block) in enumerate(zip(space.groups, d.blocks)):
        if len(block) != g.size:
            problems.append(f"structure: group {gi} has {len(block)} coordinates, expected {g.size}")
        for j, v in enumerate(block):
            if g.grid_index(v) is None:
                problems.append(f"off-grid: group {gi} coordinate {j} = {v}")
        if g.ordered and any(b < a for a, b in zip(block, block[1:])):
            problems.append(f"unsorted: group {gi}")
        if g.distinct:
            seen = set()
            for v in block:
                key = round(v / GRID_TOL)
                if key in seen:
                    problems.append(f"duplicate: group {gi} value {v}")
                seen.add(key)
    return ValidityReport(tuple(problems))


def canonicalize_design(raw: Design, space: DesignSpace) -> Design:
    """Snap coordinates to their grid values and sort time groups."""
    if len(raw.blocks) != len(space.groups):
        raise DesignError(f"expected {len(space.groups)} groups, got {len(raw.blocks)}")
    blocks = []
    for gi, (g, block) in enumerate(zip(space.groups, raw.blocks)):
        if len(block) != g.size:
            raise DesignError(f"group {gi} has {len(block)} coordinates, expected {g.size}")
        snapped = []
        for v in block:
            i = g.grid_index(v)
            if i is None:
                raise GridViolation(f"coordinate {v} is not on the grid of group {gi}")
            snapped.append(g.grid[i])
        if g.distinct and len(set(snapped)) != len(snapped):
            raise PolicyViolation(f"repeated coordinate in group {gi} under the distinct policy")
        blocks.append(tuple(sorted(snapped)) if g.ordered else tuple(snapped))
    return Design(tuple(blocks))


def grid_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


EPI4_GRID = grid_range(0.25, 10.0, 0.25)
EPI2_GRID = grid_range(0.5, 10.0, 0.5)
MACRO_TEXP_GRID = grid_range(0.1, 1.5, 0.1)
MACRO_TOBS_GRID = grid_range(0.25, 10.0, 0.25)
LOGISTIC_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)


def make_space(name: str, n_points: int | None = None) -> DesignSpace:
    """Build a named design-space preset.

    ``epi4`` and ``macro`` take the number of observation times from
    ``n_points``; the other presets encode their structure in the name
    (``epi2-q2-nd3``, ``logistic-fe-n6``, ``logistic-re-G4``).
    """
    if name == "epi4":
        n = 1 if n_points is None else n_points
        return DesignSpace(f"epi4-n{n}", (GroupSpec(EPI4_GRID, n),))
    if m := re.fullmatch(r"epi4-n(\d+)", name):
        return make_space("epi4", int(m.group(1)))
    if m := re.fullmatch(r"epi2-q(\d+)-nd(\d+)", name):
        q, nd = int(m.group(1)), int(m.group(2))
        return DesignSpace(name, tuple(GroupSpec(EPI2_GRID, nd, label=f"r{i + 1}") for i in range(q)))
    if name == "epi2":
        return make_space(f"epi2-q1-nd{1 if n_points is None else n_points}")
    if name == "macro" or re.fullmatch(r"macro-n\d+", name):
        n = int(name.split("-n")[1]) if "-n" in name else (1 if n_points is None else n_points)
        return DesignSpace(
            f"macro-n{n}",
            (
                GroupSpec(MACRO_TEXP_GRID, 1, ordered=True, distinct=False, label="t_exp"),
                GroupSpec(MACRO_TOBS_GRID, n, ordered=True, distinct=False, label="t_obs"),
            ),
        )
    if m := re.fullmatch(r"logistic-fe-n(\d+)", name):
        n = int(m.group(1))
        return DesignSpace(name, (GroupSpec(LOGISTIC_GRID, 4 * n, ordered=False, distinct=False, label="x"),))
    if m := re.fullmatch(r"logistic-re-G(\d+)", name):
        n = 6 * int(m.group(1))
        return DesignSpace(name, (GroupSpec(LOGISTIC_GRID, 4 * n, ordered=False, distinct=False, label="x"),))
    if m := re.fullmatch(r"const-n(\d+)", name):
        return DesignSpace(name, (GroupSpec(grid_range(0.0, 1.0, 0.25), int(m.group(1))),))
    raise KeyError(f"unknown design-space preset {name!r}")


# ---------------------------------------------------------------------------
# Model priors and labeled datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorModelProbabilities:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probs)
        object.__setattr__(self, "probs", p)
        if not p:
            raise ValueError("need at least one model")
        if any(x < 0 for x in p):
            raise ValueError("prior model probabilities must be non-negative")
        if abs(sum(p) - 1.0) > 1e-12:
            raise ValueError(f"prior model probabilities sum to {sum(p)}, not 1")

    @classmethod
    def uniform(cls, k: int) -> "PriorModelProbabilities":
        return cls(tuple([1.0 / k] * k))

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> "PriorModelProbabilities":
        w = np.asarray(weights, dtype=float)
        p = w / w.sum()
        # exact renormalisation so the sum check holds to rounding
        p[-1] = 1.0 - p[:-1].sum()
        return cls(tuple(p.tolist()))

    @property
    def K(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Rows of (model label in 1..K, feature vector)."""

    labels: np.ndarray
    features: np.ndarray
    K: int
    design: Design | None = None
    family: str = ""
    seed: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labels.shape[0] != feats.shape[0]:
            raise ValueError("labels and features disagree on the number of rows")
        if labels.size and (labels.min() < 1 or labels.max() > self.K):
            raise ValueError(f"labels must lie in 1..{self.K}")
        labels.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K + 1)[1:]

    def to_csv(self, path) -> None:
        header = ",".join(["label"] + [f"f{i + 1}" for i in range(self.n_features)])
        table = np.column_stack([self.labels, self.features])
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, K: int, **kw) -> "LabeledDataset":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, 0].astype(np.int64), table[:, 1:], K, **kw)
