import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eeggnn.errors import ValidationError
from eeggnn.splitting import FoldPlan, check_plan, make_plan, split_cross, split_intra, subjects_per_fold


def test_intra_singletons():
    plan = split_intra(10, 10, seed=0)
    assert sorted(len(f) for f in plan.folds) == [1] * 10
    assert check_plan(plan, 10) == []


def test_intra_uneven_sizes():
    plan = split_intra(103, 10, seed=1)
    assert sorted(len(f) for f in plan.folds) == [10] * 7 + [11] * 3


def test_cross_remainder_goes_to_last_fold():
    subjects = np.repeat(np.arange(123), 3)
    plan = split_cross(subjects, 10, seed=0)
    assert subjects_per_fold(plan, subjects) == [12] * 9 + [15]


def test_cross_one_subject_per_fold():
    subjects = np.repeat(np.arange(5), 4)
    plan = split_cross(subjects, 5, seed=2)
    assert subjects_per_fold(plan, subjects) == [1] * 5


def test_too_few_units():
    with pytest.raises(ValidationError):
        split_cross([0, 0, 1, 1], 3)
    with pytest.raises(ValidationError):
        split_intra(3, 4)
    with pytest.raises(ValidationError):
        split_intra(10, 1)
    with pytest.raises(ValidationError):
        make_plan("loso", [0, 1], 2)


def test_deterministic_given_seed():
    subjects = np.repeat(np.arange(12), 5)
    for mode in ("intra", "cross"):
        a = make_plan(mode, subjects, 4, seed=3)
        b = make_plan(mode, subjects, 4, seed=3)
        assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))
    c = make_plan("cross", subjects, 4, seed=4)
    assert not all(np.array_equal(x, y) for x, y in zip(a.folds, c.folds))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(8, 30), st.integers(1, 6))
def test_partition_invariants(seed, K, S, per):
    subjects = np.repeat(np.arange(S), per)
    n = subjects.size
    for mode in ("intra", "cross"):
        plan = make_plan(mode, subjects, K, seed)
        assert check_plan(plan, n, subjects) == []
        for i in range(K):
            tr, te = plan.train_indices(i), plan.test_indices(i)
            assert np.intersect1d(tr, te).size == 0
            assert tr.size + te.size == n
        if mode == "cross":
            for i in range(K):
                assert np.intersect1d(subjects[plan.train_indices(i)], subjects[plan.test_indices(i)]).size == 0


def test_block_size_keeps_runs_together():
    plan = split_intra(23, 4, seed=0, block_size=5)
    for f in plan.folds:
        blocks = np.unique(f // 5)
        assert f.size == sum(min(5, 23 - 5 * b) for b in blocks)
    assert check_plan(plan, 23) == []


def test_check_plan_flags_problems():
    plan = FoldPlan([np.array([0, 1]), np.array([1, 2])], "intra", 0)
    assert any("more than one" in p for p in check_plan(plan, 4))
    assert any("no fold" in p for p in check_plan(plan, 4))
    bad = FoldPlan([np.array([0, 1]), np.array([2, 3])], "cross", 0)
    assert any("spans" in p for p in check_plan(bad, 4, np.array([0, 1, 1, 2])))


def test_json_round_trip():
    plan = split_cross(np.repeat(np.arange(6), 2), 3, seed=5)
    back = FoldPlan.from_json(plan.to_json())
    assert back.mode == "cross" and back.seed == 5
    assert all(np.array_equal(a, b) for a, b in zip(plan.folds, back.folds))
