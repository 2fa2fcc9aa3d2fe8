"""Random forests: bagged unpruned trees with per-node feature subsampling,
majority vote, averaged class probabilities and out-of-bag prediction."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import LabeledDataset, PriorModelProbabilities, RngStream, as_stream
from . import _kernels
from .tree import FeatureEncoding, Tree, _check_X, grow_encoded


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    mtry: int | None = None  # default floor(sqrt(F))
    priors: PriorModelProbabilities | None = None
    min_leaf: int = 1
    max_depth: int = 10_000
    threads: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("a forest needs at least one tree")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be at least 1")

    def resolve_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, math.isqrt(n_features))
        if not 1 <= m <= n_features:
            raise ValueError(f"mtry={m} outside 1..{n_features}")
        return m


@dataclass(eq=False)
class Forest:
    trees: list[Tree]
    inbag: np.ndarray  # (B, n) bootstrap multiplicities
    K: int
    n_features: int
    train_id: int
    _packed: tuple | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def packed(self):
        """All trees concatenated into flat node arrays (built once)."""
        if self._packed is None:
            offs = np.cumsum([0] + [t.n_nodes for t in self.trees])
            feature = np.concatenate([t.feature for t in self.trees])
            threshold = np.concatenate([t.threshold for t in self.trees])
            left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offs)])
            right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offs)])
            label = np.concatenate([t.node_label for t in self.trees]).astype(np.int64)
            prob = np.concatenate([t.node_prob for t in self.trees])
            self._packed = (feature, threshold, left, right, offs[:-1].astype(np.int64), label, prob)
        return self._packed

    def leaves(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        feature, threshold, left, right, roots, _, _ = self.packed()
        return _kernels.apply_forest(X, feature, threshold, left, right, roots)


def _fit_one(enc, labels0, K, priors, mtry, cfg, stream: RngStream, n: int):
    g = stream.generator()
    inbag = np.bincount(g.integers(0, n, size=n), minlength=n).astype(np.float64)
    tree = grow_encoded(
        enc, labels0, inbag, K, priors,
        min_split=2 * cfg.min_leaf, min_leaf=cfg.min_leaf, max_depth=cfg.max_depth,
        mtry=mtry, seed=int(g.integers(0, 2**62)),
    )
    return tree, inbag


def train_forest(data: LabeledDataset, cfg: ForestConfig = ForestConfig(),
                 rng: RngStream | int | None = None) -> Forest:
    """Grow ``cfg.n_trees`` unpruned trees on bootstrap resamples of ``data``.

    Tree ``b`` draws from ``split_rng(rng, b)`` so the forest does not depend
    on how many threads grow it.
    """
    n = len(data)
    if n < 2:
        raise ValueError("a forest needs at least two training rows")
    stream = as_stream(rng)
    priors = (cfg.priors or PriorModelProbabilities.uniform(data.K)).as_array()
    mtry = cfg.resolve_mtry(data.n_features)
    enc = FeatureEncoding.fit(data.features)
    labels0 = np.ascontiguousarray(data.labels - 1)
    args = (enc, labels0, data.K, priors, mtry, cfg)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            fitted = list(pool.map(lambda b: _fit_one(*args, stream.split(b), n), range(cfg.n_trees)))
    else:
        fitted = [_fit_one(*args, stream.split(b), n) for b in range(cfg.n_trees)]
    trees = [t for t, _ in fitted]
    inbag = np.stack([w for _, w in fitted])
    return Forest(trees, inbag, data.K, data.n_features, id(data))


def _majority(votes: np.ndarray) -> np.ndarray:
    return np.argmax(votes, axis=1) + 1


def forest_predict(forest: Forest, features) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Majority-vote labels (1-based), averaged probabilities and vote shares."""
    leaves = forest.leaves(features)
    _, _, _, _, _, label, prob = forest.packed()
    mask = np.ones(leaves.shape, dtype=np.bool_)
    votes = _kernels.vote_counts(leaves, label, forest.K, mask)
    probs = _kernels.mean_prob(leaves, prob)
    return _majority(votes), probs, votes / forest.n_trees


@dataclass(frozen=True)
class OobPrediction:
    labels: np.ndarray  # 1-based; 0 where uncovered
    covered: np.ndarray  # bool
    votes: np.ndarray

    @property
    def n_uncovered(self) -> int:
        return int((~self.covered).sum())


def oob_predict(forest: Forest, data: LabeledDataset) -> OobPrediction:
    """Vote for every training row using only trees that left it out of bag."""
    if id(data) != forest.train_id or len(data) != forest.inbag.shape[1]:
        raise ValueError("out-of-bag prediction needs the forest's own training set")
    leaves = forest.leaves(data.features)
    _, _, _, _, _, label, _ = forest.packed()
    mask = forest.inbag == 0
    votes = _kernels.vote_counts(leaves, label, forest.K, mask)
    covered = votes.sum(axis=1) > 0
    labels = np.where(covered, _majority(votes), 0)
    return OobPrediction(labels, covered, votes)


def misclassification_matrix(truth, predicted, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalised confusion matrix and a flag for rows with no samples."""
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("truth and predictions differ in length")
    if t.size and (t.min() < 1 or t.max() > K or p.min() < 1 or p.max() > K):
        raise ValueError(f"labels must lie in 1..{K}")
    counts = np.zeros((K, K))
    np.add.at(counts, (t - 1, p - 1), 1.0)
    totals = counts.sum(axis=1)
    empty = totals == 0
    mat = np.divide(counts, totals[:, None], out=np.zeros_like(counts), where=~empty[:, None])
    return mat, empty


def matrix_to_csv(mat: np.ndarray, names: list[str], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(["true"] + list(names)) + "\n")
        for name, row in zip(names, mat):
            fh.write(",".join([name] + [repr(float(v)) for v in row]) + "\n")
