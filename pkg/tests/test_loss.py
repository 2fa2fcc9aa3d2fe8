import numpy as np
import pytest

from classdesign.core import Design, PriorModelProbabilities, RngStream
from classdesign.likelihood import EpiBayesOracle
from classdesign.loss import (
    IncompatibleEstimator,
    LossBinding,
    OracleError,
    check_method,
    estimate_loss01_classifier,
    estimate_loss_mdl_train,
    estimate_loss_oracle,
    loss_curve,
    read_curve,
    stratified_error,
    validate_forest,
    write_curve,
)
from classdesign.classify import ForestConfig
from classdesign.models import ConstantFamily, EpidemicFamily

D = Design.of([0.5])


def test_stratified_error_hand_value():
    labels = np.array([1, 1, 2, 2])
    wrong = np.array([True, False, False, False])
    v, se = stratified_error(labels, wrong, PriorModelProbabilities((0.5, 0.5)))
    assert v == 0.25
    assert se == pytest.approx(np.sqrt(0.25 * 0.25 / 2))


@pytest.mark.parametrize("method", ["tree-train", "tree-test", "rf-oob"])
def test_single_model_zero_loss(method):
    est = estimate_loss01_classifier(D, ConstantFamily(1), method, 50, 50, rng=0,
                                     forest_cfg=ForestConfig(n_trees=10))
    assert est.value == 0.0


@pytest.mark.parametrize("method", ["tree-train", "tree-test", "rf-oob"])
def test_constant_family_reaches_prior_mode_bound(method):
    est = estimate_loss01_classifier(D, ConstantFamily(4), method, 500, 500, rng=1,
                                     forest_cfg=ForestConfig(n_trees=20))
    assert abs(est.value - 0.75) <= 3 * est.se + 1e-12


def test_constant_family_deviance_is_log_k():
    assert estimate_loss_mdl_train(D, ConstantFamily(1), "tree-train", 50, rng=0).value == pytest.approx(0.0, abs=1e-9)
    est = estimate_loss_mdl_train(D, ConstantFamily(4), "tree-train", 200, rng=0)
    assert est.value == pytest.approx(np.log(4))


def test_deviance_rejects_held_out_estimators():
    with pytest.raises(IncompatibleEstimator):
        check_method("rf-oob", "mdl")
    with pytest.raises(IncompatibleEstimator):
        check_method("tree-test", "mdl")
    with pytest.raises(IncompatibleEstimator):
        LossBinding(ConstantFamily(2), "tree-test", "mdl")
    with pytest.raises(IncompatibleEstimator):
        LossBinding(ConstantFamily(2), "bayes", "01")
    check_method("rf-train", "mdl")


def test_epi4_five_day_rf_oob():
    est = estimate_loss01_classifier(Design.of([5.0]), EpidemicFamily("epi4"), "rf-oob", 5000, rng=RngStream(0))
    assert abs(est.value - 0.661) <= 0.03
    assert est.meta["uncovered"] == 0


def test_epi4_deviance_curve_minimum():
    fam = EpidemicFamily("epi4")
    binding = LossBinding(fam, "tree-train", "mdl", j_train=5000)
    grid = fam.default_space(1).groups[0].grid
    curve = loss_curve(binding, [Design.of([t]) for t in grid], RngStream(0))
    best = grid[int(np.argmin([e.value for e in curve]))]
    assert 0.5 <= best <= 0.75


def test_estimates_are_seed_reproducible():
    fam = EpidemicFamily("epi4")
    a = estimate_loss01_classifier(D, fam, "rf-oob", 300, rng=RngStream(4), forest_cfg=ForestConfig(n_trees=20))
    b = estimate_loss01_classifier(D, fam, "rf-oob", 300, rng=RngStream(4), forest_cfg=ForestConfig(n_trees=20))
    assert a.value == b.value and a.seed == b.seed == "4"


def test_proportional_tree_test():
    est = estimate_loss01_classifier(D, ConstantFamily(4), "tree-test", 100, 100, rng=0, test_mode="proportional")
    assert est.j_test == 100 and 0.6 < est.value < 0.9


def test_oracle_single_model_is_zero():
    fam = ConstantFamily(1)
    oracle = lambda X: np.ones((len(X), 1))  # noqa: E731
    for loss in ("01", "mdl"):
        assert estimate_loss_oracle(D, fam, oracle, loss, 100, rng=0).value == pytest.approx(0.0)


def test_data_ignoring_oracle_gives_one_minus_max_prior():
    fam = ConstantFamily(3)
    pri = PriorModelProbabilities((0.5, 0.3, 0.2))
    oracle = lambda X: np.tile(pri.as_array(), (len(X), 1))  # noqa: E731
    est = estimate_loss_oracle(D, fam, oracle, "01", 200, pri, rng=0)
    assert est.value == pytest.approx(0.5)


def test_oracle_shape_and_normalisation_checked():
    fam = ConstantFamily(2)
    with pytest.raises(OracleError):
        estimate_loss_oracle(D, fam, lambda X: np.ones((len(X), 3)) / 3, "01", 10, rng=0)
    with pytest.raises(OracleError):
        estimate_loss_oracle(D, fam, lambda X: np.ones((len(X), 2)), "01", 10, rng=0)


def test_toy_monte_carlo_bayes_loss_against_enumeration(frozen):
    toy = frozen["toy_n5_t1"]
    exact = 0.5 * np.minimum(toy["death"], toy["si"]).sum()
    fam = EpidemicFamily("epi2", population=5)
    design = Design.of([1.0])
    oracle = EpiBayesOracle(design, "gauss-hermite", population=5)
    est = estimate_loss_oracle(design, fam, oracle, "01", 20_000, rng=RngStream(3))
    assert abs(est.value - exact) <= 3 * est.se


def test_curve_round_trip(tmp_path):
    binding = LossBinding(ConstantFamily(2), "tree-train", j_train=50)
    curve = loss_curve(binding, [Design.of([0.0]), Design.of([0.5])], 1)
    path = tmp_path / "curve.csv"
    write_curve(curve, path)
    rows = read_curve(path)
    assert [r["value"] for r in rows] == [e.value for e in curve]
    assert rows[0]["design"] == "0"


def test_common_random_numbers_share_streams():
    binding = LossBinding(EpidemicFamily("epi4"), "tree-train", j_train=200)
    a = loss_curve(binding, [Design.of([1.0]), Design.of([1.0])], 3)
    assert a[0].value == a[1].value
    b = loss_curve(binding, [Design.of([1.0]), Design.of([1.0])], 3, common_random_numbers=False)
    assert b[0].value != b[1].value


def test_validate_single_model_family():
    res = validate_forest(D, ConstantFamily(1), 20, 20, rng=0)
    assert res.error == 0.0 and np.array_equal(res.matrix, np.eye(1))


def test_validate_rows_sum_to_one():
    res = validate_forest(Design.of([1.0]), EpidemicFamily("epi4"), 500, 500, rng=0,
                          forest_cfg=ForestConfig(n_trees=20))
    assert np.allclose(res.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert 0.4 < res.error < 0.8
