"""Validation protocols: CV, fixed-epoch CV (FCV) and nested CV (NCV).

All three start from an accuracy matrix ``acc[i, j]``: validation accuracy of
fold ``i`` after epoch ``j + 1``. They differ only in how an epoch is chosen.
Epoch numbers reported in results are 1-based; every argmax resolves ties to
the lowest index.

Every dataset slice taken here goes through an :class:`AuditLog`, so NCV can
prove the outer test fold was read only by its final evaluation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataio import Dataset
from .errors import DivergenceError, LeakageError, ProtocolError, ValidationError
from .models import GraphClassifier, TrainConfig, evaluate, train_epoch
from .splitting import FoldPlan, check_plan, make_plan

log = logging.getLogger(__name__)

FactoryFn = Callable[..., GraphClassifier]


@dataclass
class AccuracyMatrix:
    acc: np.ndarray

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=np.float64)
        if self.acc.ndim != 2 or 0 in self.acc.shape:
            raise ValidationError(f"accuracy matrix must be a non-empty [K, T] array, got {self.acc.shape}")
        if not np.isfinite(self.acc).all() or (self.acc < 0).any() or (self.acc > 1).any():
            raise ValidationError("accuracy entries must lie in [0, 1]")

    @property
    def K(self) -> int:
        return self.acc.shape[0]

    @property
    def T(self) -> int:
        return self.acc.shape[1]


@dataclass(frozen=True)
class AuditRecord:
    phase: str
    indices: Tuple[int, ...]
    outer: Optional[int] = None
    inner: Optional[int] = None
    grid: Optional[int] = None

    def to_dict(self) -> dict:
        return {"phase": self.phase, "outer": self.outer, "inner": self.inner,
                "grid": self.grid, "indices": list(self.indices)}


class AuditLog:
    """Ordered record of every dataset slice a protocol materialized."""

    def __init__(self):
        self.records: List[AuditRecord] = []

    def take(self, ds: Dataset, indices, phase: str, **ctx) -> Dataset:
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        self.records.append(AuditRecord(phase, tuple(int(i) for i in idx), **ctx))
        return ds.subset(idx)

    def extend(self, other: "AuditLog"):
        self.records.extend(other.records)

    def to_list(self) -> List[dict]:
        return [r.to_dict() for r in self.records]

    def check_outer_isolation(self, test_sets: Mapping[int, np.ndarray]) -> None:
        """Raise :class:`LeakageError` if an outer test fold was read before its final evaluation."""
        for outer, test in test_sets.items():
            test = set(int(i) for i in test)
            recs = [r for r in self.records if r.outer == outer]
            finals = [k for k, r in enumerate(recs) if r.phase == "final_test"]
            if len(finals) != 1 or finals[0] != len(recs) - 1:
                raise LeakageError(f"outer fold {outer}: final_test must be the single last access")
            for r in recs[:-1]:
                hit = test.intersection(r.indices)
                if hit:
                    raise LeakageError(
                        f"outer fold {outer}: phase {r.phase!r} (inner={r.inner}, grid={r.grid}) "
                        f"touched {len(hit)} test samples, e.g. {min(hit)}"
                    )
            if set(recs[-1].indices) != test:
                raise LeakageError(f"outer fold {outer}: final evaluation does not match the test fold")


@dataclass
class ProtocolResult:
    protocol: str
    summary_accuracy: float
    per_fold: List[float]
    selected_epoch: Any = None
    selected_grid_point: Any = None
    acc_matrix: Any = None
    audit_log: AuditLog = field(default_factory=AuditLog)
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_audit: bool = True) -> dict:
        def mat(m):
            if m is None:
                return None
            if isinstance(m, AccuracyMatrix):
                return m.acc.tolist()
            return [mat(x) for x in m]

        d = {
            "protocol": self.protocol,
            "summary_accuracy": float(self.summary_accuracy),
            "per_fold": [float(x) for x in self.per_fold],
            "selected_epoch": self.selected_epoch,
            "selected_grid_point": self.selected_grid_point,
            "acc_matrix": mat(self.acc_matrix),
            "details": self.details,
        }
        if include_audit:
            d["audit_log"] = self.audit_log.to_list()
        return d


# ----------------------------------------------------------------------------
# summaries


def cv_summary(acc: AccuracyMatrix) -> ProtocolResult:
    """Per-fold best epoch; reports the mean of the per-fold maxima."""
    a = acc.acc
    epo = np.argmax(a, axis=1)
    best = a[np.arange(a.shape[0]), epo]
    return ProtocolResult(
        "cv", float(best.mean()), best.tolist(), selected_epoch=[int(e) + 1 for e in epo], acc_matrix=acc
    )


def fcv_summary(acc: AccuracyMatrix) -> ProtocolResult:
    """One epoch for all folds: the maximum of the fold-averaged curve."""
    a = acc.acc
    avg = a.mean(axis=0)
    j = int(np.argmax(avg))
    return ProtocolResult(
        "fcv", float(avg[j]), a[:, j].tolist(), selected_epoch=j + 1, acc_matrix=acc,
        details={"avg_curve": avg.tolist()},
    )


def tune_grid(results: Sequence[Optional[AccuracyMatrix]]) -> Tuple[int, int, float]:
    """Pick ``(grid index, epoch, score)`` maximizing the inner fold-averaged accuracy.

    ``results[g]`` is ``None`` for a grid point whose inner runs failed.
    Ties go to the earlier grid point, then the earlier epoch.
    """
    best = None
    for g, m in enumerate(results):
        if m is None:
            continue
        avg = m.acc.mean(axis=0)
        j = int(np.argmax(avg))
        if best is None or avg[j] > best[2]:
            best = (g, j + 1, float(avg[j]))
    if best is None:
        raise ProtocolError("every grid point failed during inner cross-validation")
    return best


# ----------------------------------------------------------------------------
# training loops


def _fold_seed(base: int, outer: int, inner: Optional[int] = None) -> int:
    if inner is None:
        return base + outer
    return base + 1000 * (outer + 1) + inner


def _node_dat_extras(model, ds: Dataset, train_idx: np.ndarray, seed: int, audit: AuditLog, ctx) -> dict:
    """Unlabeled target-domain pool for NodeDAT, carved from the training side only."""
    if not model.config.node_dat:
        return {}
    subj = ds.subjects[train_idx]
    uniq = np.unique(subj)
    if uniq.size >= 2:
        rng = np.random.default_rng(seed)
        held = rng.permutation(uniq)[: uniq.size // 2]
        pool = train_idx[np.isin(subj, held)]
    else:
        pool = train_idx
    target = audit.take(ds, pool, "node_dat_target", **ctx)
    return {"target_features": target.features}


def _run_fold(factory, ds, train_idx, val_idx, cfg: TrainConfig, T: int, seed: int,
              audit: AuditLog, phases: Tuple[str, str], ctx: dict, record_every_epoch: bool = True):
    model = factory(seed)
    train = audit.take(ds, train_idx, phases[0], **ctx)
    extras = _node_dat_extras(model, ds, np.sort(train_idx), seed, audit, ctx)
    curve = []
    val = None
    for epoch in range(T):
        try:
            train_epoch(model, train, cfg, extras)
        except DivergenceError as exc:
            raise DivergenceError(f"{ctx} epoch {epoch + 1}: {exc}", batch_index=exc.batch_index) from exc
        if record_every_epoch:
            if val is None:
                val = audit.take(ds, val_idx, phases[1], **ctx)
            curve.append(evaluate(model, val))
    if not record_every_epoch:
        val = audit.take(ds, val_idx, phases[1], **ctx)
        curve.append(evaluate(model, val))
    return curve


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _collect(factory, ds, folds: Sequence[Tuple[np.ndarray, np.ndarray]], cfg, T, seeds, ctxs, phases,
             jobs=1) -> Tuple[AccuracyMatrix, AuditLog]:
    def one(k):
        local = AuditLog()
        curve = _run_fold(factory, ds, folds[k][0], folds[k][1], cfg, T, seeds[k], local, phases, ctxs[k])
        return curve, local

    out = _map(one, list(range(len(folds))), jobs)
    audit = AuditLog()
    for _, local in out:
        audit.extend(local)
    return AccuracyMatrix([c for c, _ in out]), audit


def collect_acc_matrix(model_factory: FactoryFn, plan: FoldPlan, ds: Dataset, train_cfg: TrainConfig,
                       T: int, jobs: int = 1, audit: Optional[AuditLog] = None) -> AccuracyMatrix:
    """Train a fresh model per fold for ``T`` epochs, validating after each epoch.

    ``model_factory(seed)`` must return a new model; fold ``i`` uses seed
    ``train_cfg.seed + i``.
    """
    if T < 1:
        raise ValidationError(f"T must be at least 1, got {T}")
    problems = check_plan(plan, ds.n_samples, ds.subjects)
    if problems:
        raise ValidationError("invalid fold plan: " + "; ".join(problems))
    folds = [(plan.train_indices(i), plan.test_indices(i)) for i in range(plan.K)]
    seeds = [_fold_seed(train_cfg.seed, i) for i in range(plan.K)]
    ctxs = [{"outer": i} for i in range(plan.K)]
    acc, local = _collect(model_factory, ds, folds, train_cfg, T, seeds, ctxs, ("train", "val"), jobs)
    if audit is not None:
        audit.extend(local)
    return acc


def _protocol_cv_like(kind, model_factory, ds, plan, train_cfg, T, jobs):
    audit = AuditLog()
    acc = collect_acc_matrix(model_factory, plan, ds, train_cfg, T, jobs=jobs, audit=audit)
    res = cv_summary(acc) if kind == "cv" else fcv_summary(acc)
    res.audit_log = audit
    return res


def cv_run(model_factory, ds, plan, train_cfg, T, jobs=1) -> ProtocolResult:
    return _protocol_cv_like("cv", model_factory, ds, plan, train_cfg, T, jobs)


def fcv_run(model_factory, ds, plan, train_cfg, T, jobs=1) -> ProtocolResult:
    return _protocol_cv_like("fcv", model_factory, ds, plan, train_cfg, T, jobs)


def _apply_point(cfg: TrainConfig, point: Mapping) -> TrainConfig:
    if "learning_rate" in point:
        return replace(cfg, learning_rate=float(point["learning_rate"]))
    return cfg


def ncv_run(model_factory: FactoryFn, ds: Dataset, K: int, K_prime: int, T: int,
            grid: Sequence[Mapping], train_cfg: TrainConfig, seed: int = 0, mode: str = "intra",
            jobs: int = 1, plan: Optional[FoldPlan] = None) -> ProtocolResult:
    """Nested cross-validation with grid tuning in the inner loop.

    ``model_factory(seed, point)`` builds a model for grid point ``point``
    (a mapping that may set ``hidden_dim``; ``learning_rate`` is applied to
    the training config). For each outer fold the inner ``K_prime``-fold CV
    picks the grid point and fixed epoch ``T'`` with the best averaged
    validation accuracy; a fresh model is trained for ``T'`` epochs on the
    whole outer training side and scored once on the outer test fold. A grid
    point whose inner training diverges is dropped from selection.
    """
    if K < 2 or K_prime < 2:
        raise ValidationError(f"K and K_prime must be at least 2, got {K}, {K_prime}")
    if not grid:
        raise ValidationError("grid must contain at least one point")
    if T < 1:
        raise ValidationError(f"T must be at least 1, got {T}")
    grid = [dict(p) for p in grid]
    plan = plan if plan is not None else make_plan(mode, ds.subjects, K, seed)
    problems = check_plan(plan, ds.n_samples, ds.subjects)
    if problems:
        raise ValidationError("invalid fold plan: " + "; ".join(problems))

    def outer_fold(i):
        audit = AuditLog()
        trval = plan.train_indices(i)
        test = plan.test_indices(i)
        inner_plan = make_plan(plan.mode, ds.subjects[trval], K_prime, _fold_seed(seed, i, 999))
        inner_folds = [(trval[inner_plan.train_indices(j)], trval[inner_plan.test_indices(j)])
                       for j in range(K_prime)]
        matrices, failures = [], {}
        for g, point in enumerate(grid):
            cfg_g = _apply_point(train_cfg, point)
            seeds = [_fold_seed(train_cfg.seed, i, j) for j in range(K_prime)]
            ctxs = [{"outer": i, "inner": j, "grid": g} for j in range(K_prime)]
            try:
                m, local = _collect(lambda s, p=point: model_factory(s, p), ds, inner_folds, cfg_g, T,
                                    seeds, ctxs, ("inner_train", "inner_val"))
                audit.extend(local)
                matrices.append(m)
            except DivergenceError as exc:
                log.warning("outer fold %d grid point %s diverged: %s", i, point, exc)
                failures[g] = str(exc)
                matrices.append(None)
        g_best, t_best, inner_score = tune_grid(matrices)
        point = grid[g_best]
        curve = _run_fold(lambda s: model_factory(s, point), ds, trval, test,
                          _apply_point(train_cfg, point), t_best, _fold_seed(train_cfg.seed, i), audit,
                          ("final_train", "final_test"), {"outer": i}, record_every_epoch=False)
        return {
            "test_acc": curve[-1], "grid_index": g_best, "epoch": t_best, "inner_score": inner_score,
            "inner": matrices, "failures": failures, "audit": audit, "test": test,
        }

    outs = _map(outer_fold, list(range(plan.K)), jobs)
    audit = AuditLog()
    for o in outs:
        audit.extend(o["audit"])
    audit.check_outer_isolation({i: o["test"] for i, o in enumerate(outs)})

    per_fold = [o["test_acc"] for o in outs]
    return ProtocolResult(
        "ncv",
        float(np.mean(per_fold)),
        per_fold,
        selected_epoch=[o["epoch"] for o in outs],
        selected_grid_point=[grid[o["grid_index"]] for o in outs],
        acc_matrix=[[m for m in o["inner"]] for o in outs],
        audit_log=audit,
        details={
            "grid": grid,
            "inner_scores": [o["inner_score"] for o in outs],
            "selected_grid_index": [o["grid_index"] for o in outs],
            "failed_grid_points": [{str(k): v for k, v in o["failures"].items()} for o in outs],
            "selected_inner_curve": [o["inner"][o["grid_index"]].acc.mean(axis=0).tolist() for o in outs],
        },
    )
