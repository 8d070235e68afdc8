import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eeggnn.dataio import SynthSpec, synth_generate
from eeggnn.errors import LeakageError, ProtocolError, ValidationError
from eeggnn.models import GraphClassifier, ModelConfig, ModelFactory, TrainConfig
from eeggnn.protocols import (
    AccuracyMatrix,
    AuditLog,
    AuditRecord,
    collect_acc_matrix,
    cv_run,
    cv_summary,
    fcv_summary,
    ncv_run,
    tune_grid,
)
from eeggnn.splitting import FoldPlan, split_cross


def balanced_ds(n_subjects=4, per=6, seed=0, sep=3.0):
    return synth_generate(SynthSpec(n_subjects, per, 4, 2, 2, class_separation=sep, noise_std=0.5, seed=seed))


def constant_factory(seed, point=None):
    model = GraphClassifier(ModelConfig("dgcnn", 2, 4, 2, hidden_dim=3, dropout=0.0), seed=seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name != "adjacency_param":
                p.zero_()
    return model


FROZEN = TrainConfig(learning_rate=0.0, batch_size=8)


# -- summaries -------------------------------------------------------------------


def test_worked_matrix():
    acc = AccuracyMatrix([[0.5, 0.7, 0.6], [0.6, 0.8, 0.5]])
    cv = cv_summary(acc)
    assert cv.per_fold == [0.7, 0.8]
    assert cv.summary_accuracy == 0.75
    assert cv.selected_epoch == [2, 2]
    fcv = fcv_summary(acc)
    assert fcv.details["avg_curve"] == [0.55, 0.75, 0.55]
    assert fcv.summary_accuracy == 0.75 and fcv.selected_epoch == 2


def test_cv_fcv_gap():
    acc = AccuracyMatrix([[0.9, 0.1], [0.1, 0.9]])
    assert cv_summary(acc).summary_accuracy == 0.9
    assert fcv_summary(acc).summary_accuracy == 0.5


def test_constant_and_single_cell():
    acc = AccuracyMatrix(np.full((3, 4), 0.3))
    assert cv_summary(acc).summary_accuracy == pytest.approx(0.3, abs=1e-15)
    assert cv_summary(acc).selected_epoch == [1, 1, 1]
    assert fcv_summary(acc).selected_epoch == 1
    single = AccuracyMatrix([[0.42]])
    assert cv_summary(single).summary_accuracy == fcv_summary(single).summary_accuracy == 0.42


def test_accuracy_matrix_validation():
    for bad in ([[1.2]], [[np.nan]], np.zeros((0, 3)), [0.5, 0.5]):
        with pytest.raises(ValidationError):
            AccuracyMatrix(bad)


def test_cv_dominates_fcv_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        acc = AccuracyMatrix(rng.uniform(size=(10, 100)))
        assert cv_summary(acc).summary_accuracy >= fcv_summary(acc).summary_accuracy


@settings(max_examples=200)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1)))
def test_cv_dominates_fcv_property(a):
    acc = AccuracyMatrix(a)
    assert cv_summary(acc).summary_accuracy >= fcv_summary(acc).summary_accuracy - 1e-15


def test_tune_grid():
    a = AccuracyMatrix([[0.5, 0.6], [0.5, 0.6]])
    b = AccuracyMatrix([[0.8, 0.7], [0.8, 0.7]])
    assert tune_grid([a]) == (0, 2, 0.6)
    assert tune_grid([a, b])[:2] == (1, 1)
    assert tune_grid([b, b])[0] == 0
    assert tune_grid([None, a])[0] == 1
    with pytest.raises(ProtocolError):
        tune_grid([None, None])


# -- fold loops --------------------------------------------------------------------


def test_acc_matrix_shape_and_constant_predictor():
    ds = balanced_ds()
    plan = split_cross(ds.subjects, 2, seed=0)
    acc = collect_acc_matrix(constant_factory, plan, ds, FROZEN, T=1)
    assert acc.acc.shape == (2, 1)
    acc = collect_acc_matrix(constant_factory, plan, ds, FROZEN, T=3)
    assert np.array_equal(acc.acc, np.full((2, 3), 0.5))


def test_acc_matrix_deterministic():
    ds = balanced_ds()
    plan = split_cross(ds.subjects, 2, seed=0)
    factory = ModelFactory(ModelConfig("dgcnn", 2, 4, 2, hidden_dim=3))
    tc = TrainConfig(learning_rate=0.01, batch_size=4)
    a = collect_acc_matrix(factory, plan, ds, tc, T=3)
    b = collect_acc_matrix(factory, plan, ds, tc, T=3)
    assert np.array_equal(a.acc, b.acc)
    c = collect_acc_matrix(factory, plan, ds, tc, T=3, jobs=2)
    assert np.array_equal(a.acc, c.acc)


def test_cv_run_audit_covers_accesses():
    ds = balanced_ds()
    plan = split_cross(ds.subjects, 2, seed=0)
    res = cv_run(constant_factory, ds, plan, FROZEN, 2)
    phases = [r.phase for r in res.audit_log.records]
    assert phases == ["train", "val", "train", "val"]


def test_invalid_plan_rejected():
    ds = balanced_ds()
    bad = FoldPlan([np.arange(10), np.arange(5, ds.n_samples)], "intra", 0)
    with pytest.raises(ValidationError):
        collect_acc_matrix(constant_factory, bad, ds, FROZEN, 1)


# -- nested CV ---------------------------------------------------------------------


def test_ncv_constant_predictor():
    ds = balanced_ds()
    res = ncv_run(constant_factory, ds, 2, 2, 2, [{}], FROZEN, seed=0, mode="cross")
    assert res.summary_accuracy == 0.5
    assert res.per_fold == [0.5, 0.5]
    assert res.selected_epoch == [1, 1]


def ncv_small(jobs=1, **kw):
    ds = balanced_ds(n_subjects=6, per=8, seed=1)
    factory = ModelFactory(ModelConfig("dgcnn", 2, 4, 2, hidden_dim=4, dropout=0.0, **kw))
    tc = TrainConfig(learning_rate=0.01, batch_size=8, seed=2)
    return ds, ncv_run(factory, ds, 3, 2, 3, [{"learning_rate": 0.01}, {"hidden_dim": 6}], tc, seed=5,
                       mode="cross", jobs=jobs)


def test_ncv_audit_clean():
    ds, res = ncv_small()
    outer_tests = {}
    for r in res.audit_log.records:
        if r.phase == "final_test":
            outer_tests[r.outer] = np.array(r.indices)
    assert sorted(outer_tests) == [0, 1, 2]
    for r in res.audit_log.records:
        if r.phase != "final_test":
            assert np.intersect1d(r.indices, outer_tests[r.outer]).size == 0
    res.audit_log.check_outer_isolation(outer_tests)


def test_ncv_serial_and_parallel_identical():
    _, a = ncv_small(jobs=1)
    _, b = ncv_small(jobs=3)
    assert a.to_dict() == b.to_dict()


def test_ncv_node_dat_target_pool_stays_on_training_side():
    ds = balanced_ds(n_subjects=6, per=8, seed=1)
    factory = ModelFactory(ModelConfig("rgnn", 2, 4, 2, hidden_dim=4, dropout=0.0, node_dat=True))
    res = ncv_run(factory, ds, 3, 2, 2, [{}], TrainConfig(learning_rate=0.01, batch_size=8), mode="cross")
    targets = [r for r in res.audit_log.records if r.phase == "node_dat_target"]
    assert targets
    tests = {r.outer: set(r.indices) for r in res.audit_log.records if r.phase == "final_test"}
    for r in targets:
        assert not tests[r.outer].intersection(r.indices)
        if r.inner is not None:
            val = next(v for v in res.audit_log.records
                       if v.phase == "inner_val" and (v.outer, v.inner, v.grid) == (r.outer, r.inner, r.grid))
            assert not set(val.indices).intersection(r.indices)


class LeakyPlan(FoldPlan):
    """Training side of fold 0 secretly includes one of its test samples."""

    def train_indices(self, i):
        idx = super().train_indices(i)
        if i == 0:
            idx = np.sort(np.append(idx, self.folds[0][0]))
        return idx


def test_injected_leak_detected():
    ds = balanced_ds()
    clean = split_cross(ds.subjects, 2, seed=0)
    leaky = LeakyPlan(clean.folds, clean.mode, clean.seed)
    with pytest.raises(LeakageError):
        ncv_run(constant_factory, ds, 2, 2, 1, [{}], FROZEN, plan=leaky)


def test_audit_log_rules():
    log = AuditLog()
    log.records = [AuditRecord("final_test", (1, 2), outer=0), AuditRecord("inner_train", (3,), outer=0)]
    with pytest.raises(LeakageError):
        log.check_outer_isolation({0: np.array([1, 2])})
    log.records = [AuditRecord("final_train", (3,), outer=0), AuditRecord("final_test", (1,), outer=0)]
    with pytest.raises(LeakageError):
        log.check_outer_isolation({0: np.array([1, 2])})
    log.records = [AuditRecord("final_train", (3,), outer=0), AuditRecord("final_test", (1, 2), outer=0)]
    log.check_outer_isolation({0: np.array([1, 2])})


def test_ncv_selects_good_learning_rate_over_blowup():
    # Adam at lr=1e3 stays finite here but lands far from the good solution
    ds = synth_generate(SynthSpec(6, 40, 6, 3, 2, class_separation=3.0, noise_std=0.5, seed=4))
    factory = ModelFactory(ModelConfig("dgcnn", 2, 6, 3, hidden_dim=8, dropout=0.0))
    grid = [{"learning_rate": 1e-3}, {"learning_rate": 1e3}]
    res = ncv_run(factory, ds, 3, 2, 20, grid, TrainConfig(batch_size=8), mode="intra")
    assert res.details["selected_grid_index"] == [0, 0, 0]
    for inner in res.acc_matrix:
        good, bad = (m.acc.mean(axis=0).max() for m in inner)
        assert good > bad + 0.1
    assert res.summary_accuracy >= 0.9


def test_ncv_drops_diverging_grid_point():
    ds = balanced_ds(n_subjects=4, per=10)

    def factory(seed, point):
        model = constant_factory(seed)
        if point.get("poison"):
            with torch.no_grad():
                model.head_bias.fill_(float("nan"))
        return model

    res = ncv_run(factory, ds, 2, 2, 2, [{"poison": True}, {}], FROZEN, mode="cross")
    assert res.details["selected_grid_index"] == [1, 1]
    assert all(set(f) == {"0"} for f in res.details["failed_grid_points"])
    with pytest.raises(ProtocolError):
        ncv_run(factory, ds, 2, 2, 2, [{"poison": True}], FROZEN, mode="cross")


def test_ncv_argument_checks():
    ds = balanced_ds()
    for K, Kp, T, grid in ((1, 2, 1, [{}]), (2, 1, 1, [{}]), (2, 2, 0, [{}]), (2, 2, 1, [])):
        with pytest.raises(ValidationError):
            ncv_run(constant_factory, ds, K, Kp, T, grid, FROZEN)
