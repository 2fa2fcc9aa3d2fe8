import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from classdesign.core import (
    Design,
    DesignError,
    GridViolation,
    GroupSpec,
    LabeledDataset,
    PolicyViolation,
    PriorModelProbabilities,
    RngStream,
    canonicalize_design,
    make_space,
    validate_design,
)

seeds = st.integers(0, 2**64 - 1)
paths = st.lists(st.integers(0, 1000), max_size=4)


@given(seeds, paths)
def test_stream_is_deterministic(seed, path):
    a, b = RngStream(seed), RngStream(seed)
    for k in path:
        a, b = a.split(k), b.split(k)
    assert np.array_equal(a.generator().random(5), b.generator().random(5))
    assert a.int_seed() == b.int_seed()


@given(seeds, st.integers(0, 1000), st.integers(0, 1000))
def test_sibling_streams_differ(seed, i, j):
    if i == j:
        return
    s = RngStream(seed)
    assert not np.array_equal(s.split(i).generator().random(4), s.split(j).generator().random(4))


def test_child_differs_from_parent():
    s = RngStream(3)
    assert not np.array_equal(s.generator().random(4), s.split(0).generator().random(4))
    assert 0 <= s.int_seed() < 2**63


def test_stream_rejects_bad_seed():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)


def test_canonicalize_sorts_and_snaps():
    space = make_space("epi4", 3)
    d = canonicalize_design(Design.of([4.5, 0.75 + 1e-12, 2.0]), space)
    assert d.blocks == ((0.75, 2.0, 4.5),)
    assert validate_design(d, space).ok


def test_canonicalize_errors():
    space = make_space("epi4", 2)
    with pytest.raises(GridViolation):
        canonicalize_design(Design.of([0.3, 1.0]), space)
    with pytest.raises(PolicyViolation):
        canonicalize_design(Design.of([1.0, 1.0]), space)
    with pytest.raises(DesignError):
        canonicalize_design(Design.of([1.0]), space)


def test_validate_reports_every_problem():
    space = make_space("epi4", 3)
    rep = validate_design(Design.of([2.0, 1.0, 1.0]), space)
    kinds = {v.split(":")[0] for v in rep.violations}
    assert kinds == {"unsorted", "duplicate"}
    assert not rep


def test_unordered_groups_keep_order():
    space = make_space("logistic-fe-n1")
    d = canonicalize_design(Design.of([1.0, -1.0, 0.5, 0.5]), space)
    assert d.blocks == ((1.0, -1.0, 0.5, 0.5),)


@given(st.integers(1, 5), seeds)
def test_random_design_is_valid(n, seed):
    space = make_space("epi4", n)
    d = space.random_design(RngStream(seed).generator())
    assert validate_design(d, space).ok


def test_space_presets():
    assert make_space("epi4", 2).groups[0].grid[:3] == (0.25, 0.5, 0.75)
    assert len(make_space("epi4").groups[0].grid) == 40
    epi2 = make_space("epi2-q2-nd3")
    assert [g.size for g in epi2.groups] == [3, 3] and epi2.groups[0].grid[-1] == 10.0
    macro = make_space("macro", 2)
    assert macro.policy == "repeats" and macro.n_coords == 3
    assert make_space("logistic-re-G2").n_coords == 48
    with pytest.raises(KeyError):
        make_space("nope")


def test_with_points_extends_grid():
    space = make_space("epi4", 1).with_points(Design.of([0.3]))
    assert 0.3 in space.groups[0].grid and len(space.groups[0].grid) == 41


def test_group_spec_checks():
    with pytest.raises(ValueError):
        GroupSpec((1.0, 0.5), 1)
    with pytest.raises(ValueError):
        GroupSpec((0.0, 1.0), 3)


def test_design_record_round_trip():
    d = Design.of([0.1], [2.0, 10.0])
    rec = d.to_record(space="macro-n2", seed=4)
    assert Design.from_record(json.dumps(rec)) == d
    assert str(d) == "0.1; 2, 10"


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=20))
def test_normalized_priors_sum_to_one(w):
    p = PriorModelProbabilities.normalized(w)
    assert abs(sum(p.probs) - 1.0) <= 1e-12
    assert p.K == len(w)


def test_prior_checks():
    with pytest.raises(ValueError):
        PriorModelProbabilities((0.5, 0.6))
    with pytest.raises(ValueError):
        PriorModelProbabilities((1.5, -0.5))
    assert PriorModelProbabilities.uniform(4).probs == (0.25,) * 4


def test_labeled_dataset_checks_and_csv(tmp_path):
    ds = LabeledDataset([1, 2, 2], [[0.5], [1.0], [1.5]], 2)
    assert ds.counts.tolist() == [1, 2]
    with pytest.raises(ValueError):
        ds.features[0, 0] = 3
    with pytest.raises(ValueError):
        LabeledDataset([0], [[1.0]], 2)
    with pytest.raises(ValueError):
        LabeledDataset([1, 2], [[1.0]], 2)
    path = tmp_path / "d.csv"
    ds.to_csv(path)
    back = LabeledDataset.from_csv(path, 2)
    assert np.array_equal(back.labels, ds.labels) and np.array_equal(back.features, ds.features)
