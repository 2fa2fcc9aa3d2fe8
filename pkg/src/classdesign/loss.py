"""Expected-loss estimators: classifier-based 0-1 loss and deviance, and
oracle-based losses from posterior model probabilities."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .classify import (
    ForestConfig,
    TreeConfig,
    clamp_probs,
    forest_predict,
    grow_tree,
    misclassification_matrix,
    oob_predict,
    train_forest,
    tree_predict,
)
from .core import Design, LabeledDataset, PriorModelProbabilities, RngStream, as_stream
from .models import Family, generate_labeled_set

ZERO_ONE = "01"
DEVIANCE = "mdl"
LOSS_KINDS = (ZERO_ONE, DEVIANCE)
METHODS = ("tree-train", "tree-test", "rf-oob", "rf-train", "bayes", "abc")
DEVIANCE_METHODS = ("tree-train", "rf-train", "bayes", "abc")


class IncompatibleEstimator(ValueError):
    pass


class OracleError(ValueError):
    pass


def check_method(method: str, loss: str) -> None:
    if method not in METHODS:
        raise IncompatibleEstimator(f"unknown estimator method {method!r}")
    if loss not in LOSS_KINDS:
        raise IncompatibleEstimator(f"unknown loss kind {loss!r}")
    if loss == DEVIANCE and method not in DEVIANCE_METHODS:
        raise IncompatibleEstimator(
            f"deviance cannot be estimated with {method}: a leaf or forest with no votes for the "
            "true model gives probability 0 on held-out rows, so only training-set evaluation is allowed"
        )


@dataclass(frozen=True)
class LossEstimate:
    value: float
    se: float
    method: str
    loss: str
    j_train: int
    j_test: int
    design: Design
    seed: str
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "se", float(self.se))

    def to_record(self) -> dict:
        return {
            "design": [list(b) for b in self.design.blocks],
            "value": self.value,
            "se": self.se,
            "method": self.method,
            "loss": self.loss,
            "j_train": self.j_train,
            "j_test": self.j_test,
            "seed": self.seed,
            "meta": self.meta,
        }


def stratified_error(labels: np.ndarray, wrong: np.ndarray, priors: PriorModelProbabilities,
                     mask: np.ndarray | None = None) -> tuple[float, float]:
    """Prior-weighted mean of per-model error rates and its binomial SE."""
    p = priors.as_array()
    value = 0.0
    var = 0.0
    for m in range(1, priors.K + 1):
        sel = labels == m
        if mask is not None:
            sel &= mask
        n = int(sel.sum())
        if n == 0:
            continue
        e = float(wrong[sel].mean())
        value += p[m - 1] * e
        var += p[m - 1] ** 2 * e * (1 - e) / n
    return value, float(np.sqrt(var))


def stratified_mean(labels: np.ndarray, values: np.ndarray, priors: PriorModelProbabilities) -> tuple[float, float]:
    """Prior-weighted mean of per-model averages and its sample SE."""
    p = priors.as_array()
    value = 0.0
    var = 0.0
    for m in range(1, priors.K + 1):
        v = values[labels == m]
        if v.size == 0:
            continue
        value += p[m - 1] * float(v.mean())
        if v.size > 1:
            var += p[m - 1] ** 2 * float(v.var(ddof=1)) / v.size
    return value, float(np.sqrt(var))


def _true_prob(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return probs[np.arange(labels.size), labels - 1]


def _fit_predict(method: str, train: LabeledDataset, priors, tree_cfg, forest_cfg, stream: RngStream):
    """Classifier labels and probabilities on the training rows."""
    if method.startswith("tree"):
        tree = grow_tree(train, _with_priors(tree_cfg, priors), stream)
        labels, probs = tree_predict(tree, train.features)
        return tree, labels, probs
    forest = train_forest(train, _with_priors(forest_cfg, priors), stream)
    labels, probs, _ = forest_predict(forest, train.features)
    return forest, labels, probs


def _with_priors(cfg, priors):
    return replace(cfg, priors=priors)


def estimate_loss01_classifier(
    design: Design,
    family: Family,
    method: str,
    j_train: int,
    j_test: int = 0,
    priors: PriorModelProbabilities | None = None,
    rng: RngStream | int | None = None,
    *,
    tree_cfg: TreeConfig = TreeConfig(),
    forest_cfg: ForestConfig = ForestConfig(),
    test_mode: str = "stratified",
) -> LossEstimate:
    """0-1 loss of a classifier trained on ``j_train`` rows per model.

    ``tree-train`` scores the training rows, ``tree-test`` a fresh test set
    (``j_test`` per model; a proportional test set has ``K * j_test`` rows
    with labels drawn from the priors) and
    ``rf-oob`` the out-of-bag votes of a forest.
    """
    check_method(method, ZERO_ONE)
    if method not in ("tree-train", "tree-test", "rf-oob"):
        raise IncompatibleEstimator(f"{method} is not a classifier 0-1 estimator")
    if j_train < 1:
        raise ValueError("need at least one training row per model")
    if method == "tree-test" and j_test < 1:
        raise ValueError("tree-test needs a test set")
    t0 = time.perf_counter()
    stream = as_stream(rng)
    priors = priors or family.priors
    train = generate_labeled_set(family, design, j_train, priors, stream.split(0))
    meta: dict = {}
    if method == "tree-train":
        tree = grow_tree(train, _with_priors(tree_cfg, priors), stream.split(2))
        pred, _ = tree_predict(tree, train.features)
        value, se = stratified_error(train.labels, pred != train.labels, priors)
    elif method == "tree-test":
        tree = grow_tree(train, _with_priors(tree_cfg, priors), stream.split(2))
        size = j_test * family.K if test_mode == "proportional" else j_test
        test = generate_labeled_set(family, design, size, priors, stream.split(1), mode=test_mode)
        pred, _ = tree_predict(tree, test.features)
        wrong = pred != test.labels
        if test_mode == "proportional":
            value = float(wrong.mean()) if len(test) else 0.0
            se = float(np.sqrt(value * (1 - value) / max(len(test), 1)))
        else:
            value, se = stratified_error(test.labels, wrong, priors)
    else:
        forest = train_forest(train, _with_priors(forest_cfg, priors), stream.split(2))
        oob = oob_predict(forest, train)
        value, se = stratified_error(train.labels, oob.labels != train.labels, priors, oob.covered)
        meta["uncovered"] = oob.n_uncovered
    return LossEstimate(value, se, method, ZERO_ONE, j_train, j_test if method == "tree-test" else 0,
                        design, str(stream), time.perf_counter() - t0, meta)


def estimate_loss_mdl_train(
    design: Design,
    family: Family,
    method: str,
    j_train: int,
    priors: PriorModelProbabilities | None = None,
    rng: RngStream | int | None = None,
    *,
    tree_cfg: TreeConfig = TreeConfig(),
    forest_cfg: ForestConfig = ForestConfig(),
) -> LossEstimate:
    """Training-set multinomial deviance with probabilities clamped at 1e-6."""
    check_method(method, DEVIANCE)
    if method not in ("tree-train", "rf-train"):
        raise IncompatibleEstimator(f"{method} is not a classifier deviance estimator")
    t0 = time.perf_counter()
    stream = as_stream(rng)
    priors = priors or family.priors
    train = generate_labeled_set(family, design, j_train, priors, stream.split(0))
    _, _, probs = _fit_predict(method, train, priors, tree_cfg, forest_cfg, stream.split(2))
    nll = -np.log(_true_prob(clamp_probs(probs), train.labels))
    value, se = stratified_mean(train.labels, nll, priors)
    return LossEstimate(value, se, method, DEVIANCE, j_train, 0, design, str(stream), time.perf_counter() - t0)


Oracle = Callable[[np.ndarray], np.ndarray]


def loss_from_probs(labels: np.ndarray, probs: np.ndarray, loss: str,
                    priors: PriorModelProbabilities) -> tuple[float, float]:
    """Plug posterior probabilities into the 0-1 (argmax) or deviance loss."""
    if loss == ZERO_ONE:
        return stratified_error(labels, np.argmax(probs, axis=1) + 1 != labels, priors)
    return stratified_mean(labels, -np.log(_true_prob(clamp_probs(probs), labels)), priors)


def estimate_loss_oracle(
    design: Design,
    family: Family,
    oracle: Oracle,
    loss: str,
    j: int,
    priors: PriorModelProbabilities | None = None,
    rng: RngStream | int | None = None,
    *,
    method: str = "bayes",
) -> LossEstimate:
    """Monte Carlo expected loss from an oracle ``features -> p(m | y, d)``."""
    check_method(method, loss)
    t0 = time.perf_counter()
    stream = as_stream(rng)
    priors = priors or family.priors
    data = generate_labeled_set(family, design, j, priors, stream.split(1))
    if len(data) == 0:
        return LossEstimate(0.0, 0.0, method, loss, 0, j, design, str(stream))
    probs = np.asarray(oracle(data.features), dtype=float)
    if probs.shape != (len(data), family.K):
        raise OracleError(f"oracle returned shape {probs.shape}, expected {(len(data), family.K)}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise OracleError("oracle probabilities must be non-negative and sum to 1")
    value, se = loss_from_probs(data.labels, probs, loss, priors)
    return LossEstimate(value, se, method, loss, 0, j, design, str(stream), time.perf_counter() - t0)


@dataclass
class LossBinding:
    """A loss estimator bound to a family and sample sizes: ``design -> estimate``.

    ``oracle_factory(design)`` supplies posterior probabilities for the
    ``bayes`` and ``abc`` methods.
    """

    family: Family
    method: str = "rf-oob"
    loss: str = ZERO_ONE
    j_train: int = 5000
    j_test: int = 5000
    priors: PriorModelProbabilities | None = None
    tree_cfg: TreeConfig = TreeConfig()
    forest_cfg: ForestConfig = ForestConfig()
    test_mode: str = "stratified"
    oracle_factory: Callable[[Design], Oracle] | None = None

    def __post_init__(self):
        check_method(self.method, self.loss)
        if self.method in ("bayes", "abc") and self.oracle_factory is None:
            raise IncompatibleEstimator(f"{self.method} needs a posterior-probability oracle")

    def __call__(self, design: Design, rng: RngStream | int | None = None) -> LossEstimate:
        if self.method in ("bayes", "abc"):
            return estimate_loss_oracle(design, self.family, self.oracle_factory(design), self.loss,
                                        self.j_test, self.priors, rng, method=self.method)
        if self.loss == DEVIANCE:
            return estimate_loss_mdl_train(design, self.family, self.method, self.j_train, self.priors, rng,
                                           tree_cfg=self.tree_cfg, forest_cfg=self.forest_cfg)
        return estimate_loss01_classifier(design, self.family, self.method, self.j_train, self.j_test,
                                          self.priors, rng, tree_cfg=self.tree_cfg,
                                          forest_cfg=self.forest_cfg, test_mode=self.test_mode)


def loss_curve(binding: LossBinding, designs: Sequence[Design], rng: RngStream | int | None = None,
               *, common_random_numbers: bool = True) -> list[LossEstimate]:
    """Estimate the loss at each design.

    With common random numbers every design reuses the same stream, so
    differences along the curve are not blurred by independent noise.
    """
    stream = as_stream(rng)
    return [binding(d, stream if common_random_numbers else stream.split(i)) for i, d in enumerate(designs)]


CURVE_HEADER = ("design", "value", "se", "method", "loss", "seed")


def write_curve(estimates: Sequence[LossEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for e in estimates:
            w.writerow([str(e.design), repr(float(e.value)), repr(float(e.se)), e.method, e.loss, e.seed])


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = float(r["value"])
        r["se"] = float(r["se"])
    return rows


@dataclass(frozen=True)
class ValidationResult:
    design: Design
    error: float
    se: float
    matrix: np.ndarray
    seed: str
    wall_time: float = 0.0


def validate_forest(
    design: Design,
    family: Family,
    j_train: int = 10_000,
    j_test: int = 10_000,
    priors: PriorModelProbabilities | None = None,
    rng: RngStream | int | None = None,
    *,
    forest_cfg: ForestConfig = ForestConfig(n_trees=100),
    test_mode: str = "stratified",
) -> ValidationResult:
    """Error rate and misclassification matrix of a forest on a fresh test set.

    A proportional test set holds ``j_test`` rows per model in total
    (``K * j_test`` rows) with labels drawn from the priors.
    """
    t0 = time.perf_counter()
    stream = as_stream(rng)
    priors = priors or family.priors
    train = generate_labeled_set(family, design, j_train, priors, stream.split(0))
    size = j_test * family.K if test_mode == "proportional" else j_test
    test = generate_labeled_set(family, design, size, priors, stream.split(1), mode=test_mode)
    if family.K == 1:
        return ValidationResult(design, 0.0, 0.0, np.ones((1, 1)), str(stream), time.perf_counter() - t0)
    forest = train_forest(train, _with_priors(forest_cfg, priors), stream.split(2))
    pred, _, _ = forest_predict(forest, test.features)
    wrong = pred != test.labels
    if test_mode == "proportional":
        error = float(wrong.mean())
        se = float(np.sqrt(error * (1 - error) / len(test)))
    else:
        error, se = stratified_error(test.labels, wrong, priors)
    matrix, _ = misclassification_matrix(test.labels, pred, family.K)
    return ValidationResult(design, error, se, matrix, str(stream), time.perf_counter() - t0)
