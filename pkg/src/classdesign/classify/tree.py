"""Classification trees: Gini growth with prior-weighted class scores,
weakest-link cost-complexity pruning, prediction and text export."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..core import LabeledDataset, PriorModelProbabilities, RngStream, as_stream
from . import _kernels

PROB_FLOOR = 1e-6


class UndefinedNode(ValueError):
    pass


def gini(counts, priors=None) -> float:
    """Gini index sum_m p_m (1 - p_m) of prior-reweighted class proportions.

    ``priors`` multiplies each class count before normalisation; in a tree
    these multipliers are ``p(m) / N_m(root)``.
    """
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    if priors is not None:
        pr = priors.as_array() if isinstance(priors, PriorModelProbabilities) else np.asarray(priors, float)
        c = c * pr
    total = c.sum()
    if total <= 0:
        raise UndefinedNode("impurity is undefined for an empty node")
    p = c / total
    return float(np.sum(p * (1.0 - p)))


@dataclass(frozen=True)
class TreeConfig:
    min_split: int = 20
    min_leaf: int = 7
    max_depth: int = 30
    cp: float = 0.01
    priors: PriorModelProbabilities | None = None

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        if self.min_split < 2 * self.min_leaf:
            raise ValueError("min_split must be at least 2 * min_leaf")
        if self.cp < 0:
            raise ValueError("cp must be non-negative")


@dataclass(frozen=True)
class FeatureEncoding:
    """Rank encoding of a feature matrix, shared by all trees of a forest."""

    codes: np.ndarray  # (n, F) int64
    bin_values: np.ndarray  # (F, max_bins) float64, padded with +inf
    n_bins: np.ndarray  # (F,) int64

    @classmethod
    def fit(cls, X: np.ndarray) -> "FeatureEncoding":
        X = np.asarray(X, dtype=np.float64)
        n, F = X.shape
        uniques = [np.unique(X[:, f]) for f in range(F)]
        max_bins = max([len(u) for u in uniques] + [1])
        bin_values = np.full((F, max_bins), np.inf)
        codes = np.empty((n, F), dtype=np.int64)
        for f, u in enumerate(uniques):
            bin_values[f, : len(u)] = u
            codes[:, f] = np.searchsorted(u, X[:, f])
        n_bins = np.array([len(u) for u in uniques], dtype=np.int64)
        return cls(codes, bin_values, n_bins)


@dataclass(frozen=True, eq=False)
class Tree:
    """A grown binary tree.

    Internal nodes route ``x[feature] < threshold`` to ``left``. Every node
    keeps its raw class counts and prior-weighted class scores, so pruning
    can turn any internal node into a leaf.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    mass: np.ndarray
    depth: np.ndarray
    K: int
    n_features: int
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def reachable(self) -> np.ndarray:
        seen = np.zeros(self.n_nodes, dtype=bool)
        stack = [0]
        while stack:
            v = stack.pop()
            seen[v] = True
            if self.feature[v] != _kernels.LEAF:
                stack.extend((int(self.left[v]), int(self.right[v])))
        return seen

    def leaves(self) -> np.ndarray:
        r = self.reachable()
        return np.flatnonzero(r & (self.feature == _kernels.LEAF))

    @property
    def n_leaves(self) -> int:
        return int(self.leaves().size)

    @property
    def node_prob(self) -> np.ndarray:
        """Normalised prior-weighted class scores of each node."""
        tot = self.mass.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(tot > 0, self.mass / np.where(tot > 0, tot, 1.0), 1.0 / self.K)
        return p

    @property
    def node_label(self) -> np.ndarray:
        """0-based argmax of the scores; ties go to the lowest label."""
        return np.argmax(self.mass, axis=1)

    def apply(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        return _kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def to_text(self, names: list[str] | None = None) -> str:
        names = names or [f"model {k + 1}" for k in range(self.K)]
        lines: list[str] = []

        def walk(v: int, indent: int):
            pad = "  " * indent
            if self.feature[v] == _kernels.LEAF:
                lab = names[int(self.node_label[v])]
                cnt = ", ".join(f"{c:g}" for c in self.counts[v])
                lines.append(f"{pad}leaf → {lab} [{cnt}]")
            else:
                lines.append(f"{pad}feature f{int(self.feature[v]) + 1} < {self.threshold[v]:g}")
                walk(int(self.left[v]), indent + 1)
                walk(int(self.right[v]), indent + 1)

        walk(0, 0)
        return "\n".join(lines)


def _check_X(X, n_features: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def class_weights(labels0: np.ndarray, w: np.ndarray, priors: np.ndarray) -> np.ndarray:
    """Per-class multipliers p(m) / N_m(root) for weighted 0-based labels."""
    K = priors.shape[0]
    root = np.bincount(labels0, weights=w, minlength=K)
    with np.errstate(divide="ignore", invalid="ignore"):
        cw = np.where(root > 0, priors / np.where(root > 0, root, 1.0), 0.0)
    return cw


def grow_encoded(enc: FeatureEncoding, labels0: np.ndarray, w: np.ndarray, K: int,
                 priors: np.ndarray, *, min_split: int, min_leaf: int, max_depth: int,
                 mtry: int, seed: int) -> Tree:
    cw = class_weights(labels0, w, priors)
    feature, _, threshold, left, right, counts, mass, depth = _kernels.build_tree(
        enc.codes, enc.bin_values, enc.n_bins, labels0, w, cw, K,
        float(min_split), float(min_leaf), int(max_depth), int(mtry), int(seed),
    )
    return Tree(feature, threshold, left, right, counts, mass, depth, K, enc.codes.shape[1])


def grow_tree(data: LabeledDataset, cfg: TreeConfig = TreeConfig(), rng: RngStream | int | None = None,
              *, prune: bool = True) -> Tree:
    """Grow a Gini tree on ``data`` and (by default) prune it at ``cfg.cp``."""
    if len(data) == 0:
        raise ValueError("cannot grow a tree on an empty dataset")
    if data.n_features < 1:
        raise ValueError("need at least one feature")
    priors = (cfg.priors or PriorModelProbabilities.uniform(data.K)).as_array()
    if priors.shape[0] != data.K:
        raise ValueError("class priors do not match the number of models")
    enc = FeatureEncoding.fit(data.features)
    w = np.ones(len(data))
    tree = grow_encoded(
        enc, data.labels - 1, w, data.K, priors,
        min_split=cfg.min_split, min_leaf=cfg.min_leaf, max_depth=cfg.max_depth,
        mtry=data.n_features, seed=as_stream(rng).int_seed(),
    )
    if prune and cfg.cp > 0:
        tree = prune_tree(tree, cfg.cp)
    return tree


def _preorder(tree: Tree, feature: np.ndarray) -> list[int]:
    order = []
    stack = [0]
    while stack:
        v = stack.pop()
        order.append(v)
        if feature[v] != _kernels.LEAF:
            stack.append(int(tree.right[v]))
            stack.append(int(tree.left[v]))
    return order


def node_risk(tree: Tree) -> np.ndarray:
    """Probability mass times Gini index of every node."""
    p = tree.mass.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = tree.mass / np.where(p > 0, p, 1.0)[:, None]
    return p * (1.0 - np.sum(q * q, axis=1))


def prune_tree(tree: Tree, cp: float) -> Tree:
    """Cost-complexity pruning at complexity ``cp``.

    Node risk is probability mass times Gini index, and ``cp`` is measured
    relative to the root risk. A subtree is collapsed when its risk reduction
    per removed leaf falls below ``cp``. The bottom-up pass returns the same
    subtree as repeatedly collapsing the weakest link.
    """
    if cp < 0:
        raise ValueError("cp must be non-negative")
    if cp == 0 or tree.feature[0] == _kernels.LEAF:
        return tree
    feature = tree.feature.copy()
    risk = node_risk(tree)
    if np.isinf(cp) or risk[0] <= 0:
        feature[0] = _kernels.LEAF
        return replace(tree, feature=feature)
    alpha = cp * risk[0]
    best = np.zeros(tree.n_nodes)
    for v in reversed(_preorder(tree, feature)):
        if feature[v] == _kernels.LEAF:
            best[v] = risk[v] + alpha
            continue
        keep = best[tree.left[v]] + best[tree.right[v]]
        collapse = risk[v] + alpha
        if collapse < keep:
            feature[v] = _kernels.LEAF
            best[v] = collapse
        else:
            best[v] = keep
    return replace(tree, feature=feature)


def tree_predict(tree: Tree, features) -> tuple[np.ndarray, np.ndarray]:
    """Labels (1-based) and class-probability estimates for each row."""
    leaves = tree.apply(features)
    return tree.node_label[leaves] + 1, tree.node_prob[leaves]


def clamp_probs(p: np.ndarray, floor: float = PROB_FLOOR) -> np.ndarray:
    q = np.clip(p, floor, 1.0)
    return q / q.sum(axis=-1, keepdims=True)
