import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from classdesign.abc import (
    AbcConfig,
    AbcOracle,
    OffGrid,
    ReferenceTable,
    abc_expected_loss,
    abc_posterior_probs,
    build_reference_table,
    retained_rows,
)
from classdesign.core import EPI4_GRID, Design, RngStream
from classdesign.models import ConstantFamily, EpidemicFamily, generate_labeled_set
from classdesign.models.epidemic import EPI4_PRIORS


def hand_table(labels, paths, grid=(0.5,)):
    labels = np.asarray(labels)
    theta = np.zeros((labels.size, 3))
    R = int(np.bincount(labels).max())
    return ReferenceTable("hand", np.asarray(grid, float), labels, theta, np.asarray(paths, np.int16), R)


def test_table_shape_and_invariants():
    fam = EpidemicFamily("epi4")
    t = build_reference_table(fam, EPI4_GRID, 1, RngStream(0))
    assert t.paths.shape == (4, 40) and sorted(t.labels.tolist()) == [1, 2, 3, 4]
    t = build_reference_table(fam, EPI4_GRID, 500, RngStream(1))
    assert t.paths.min() >= 0 and t.paths.max() <= 50
    assert np.all(np.diff(t.paths, axis=1) >= 0)
    assert np.bincount(t.labels).tolist() == [0, 500, 500, 500, 500]


def test_table_parameters_follow_priors():
    fam = EpidemicFamily("epi4")
    t = build_reference_table(fam, [1.0], 100_000, RngStream(2))
    for m, prior in EPI4_PRIORS.items():
        b1 = t.theta[t.labels == int(m), 0]
        ln = prior["b1"]
        mean = np.exp(ln.mean + ln.sd**2 / 2)
        assert abs(b1.mean() - mean) <= 3 * b1.std() / np.sqrt(b1.size)
        if "gamma" in prior:
            g = t.theta[t.labels == int(m), 2]
            assert abs(g.mean() - 100.0) <= 3 * g.std() / np.sqrt(g.size)


def test_table_is_reproducible_and_round_trips(tmp_path):
    fam = EpidemicFamily("epi2")
    a = build_reference_table(fam, [1.0, 2.0], 50, RngStream(5))
    b = build_reference_table(fam, [1.0, 2.0], 50, RngStream(5))
    assert np.array_equal(a.paths, b.paths) and np.array_equal(a.labels, b.labels)
    a.save(tmp_path / "ref")
    c = ReferenceTable.load(tmp_path / "ref")
    assert np.array_equal(c.paths, a.paths) and np.array_equal(c.theta, a.theta)
    assert c.seed == a.seed and c.family == "epi2"


def test_columns_checks():
    t = hand_table([1, 2], [[0], [1]])
    assert t.columns(Design.of([0.5])).tolist() == [0]
    with pytest.raises(OffGrid):
        t.columns(Design.of([0.75]))
    with pytest.raises(ValueError):
        t.columns(Design.of([0.5], [0.5]))


@given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.data())
def test_retained_rows_property(d, data):
    d = np.asarray(d, float)
    r = data.draw(st.integers(1, d.size))
    keep = retained_rows(d, r)
    assert keep.size == r and np.all(np.diff(keep) > 0)
    rest = np.setdiff1d(np.arange(d.size), keep)
    if rest.size:
        assert d[keep].max() <= d[rest].min()
        # boundary ties go to the lowest indices
        kth = d[keep].max()
        tied_out = rest[d[rest] == kth]
        tied_in = keep[d[keep] == kth]
        if tied_out.size:
            assert tied_in.max() < tied_out.min()


def test_retained_rows_range():
    with pytest.raises(ValueError):
        retained_rows(np.zeros(3), 4)
    with pytest.raises(ValueError):
        retained_rows(np.zeros(3), 0)


def test_retain_all_returns_table_proportions():
    t = hand_table([1, 2, 2, 3], [[0], [1], [2], [3]])
    p = abc_posterior_probs([1.0], Design.of([0.5]), t, AbcConfig(retain=4))
    assert p.tolist() == [0.25, 0.5, 0.25]


def test_data_only_one_model_can_produce():
    t = hand_table([1, 1, 2, 2], [[0], [0], [9], [8]])
    p = abc_posterior_probs([0.0], Design.of([0.5]), t, AbcConfig(retain=2))
    assert p.tolist() == [1.0, 0.0]


def test_abc_single_model_loss_is_zero():
    t = hand_table([1] * 10, [[1]] * 10)
    est = abc_expected_loss(Design.of([0.5]), ConstantFamily(1), t, AbcConfig(retain=5, j=20), rng=0)
    assert est.value == 0.0 and est.method == "abc"


def test_abc_constant_family_loss():
    g = np.random.default_rng(0)
    t = hand_table(g.permutation(np.repeat([1, 2, 3, 4], 50)), [[1]] * 200)
    est = abc_expected_loss(Design.of([0.5]), ConstantFamily(4), t, AbcConfig(retain=20, j=50), rng=0)
    assert est.value == pytest.approx(0.75)


def test_toy_abc_probabilities_near_exact_posterior(frozen):
    toy = frozen["toy_n5_t1"]
    fam = EpidemicFamily("epi2", population=5)
    design = Design.of([1.0])
    table = build_reference_table(fam, [1.0], 100_000, RngStream(6))
    oracle = AbcOracle(table, design, AbcConfig(retain=1000))
    data = generate_labeled_set(fam, design, 50, rng=RngStream(7))
    probs = oracle(data.features)
    S = 5 - data.features[:, 0].astype(int)
    exact = np.array([toy["death"][s] / (toy["death"][s] + toy["si"][s]) for s in S])
    assert np.mean(np.abs(probs[:, 0] - exact)) <= 0.05


def test_config_checks():
    with pytest.raises(ValueError):
        AbcConfig(retain=0)
