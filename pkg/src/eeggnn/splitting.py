"""Intra-subject and cross-subject K-fold plans."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ValidationError


@dataclass
class FoldPlan:
    folds: List[np.ndarray]
    mode: str  # "intra" | "cross"
    seed: int

    @property
    def K(self) -> int:
        return len(self.folds)

    def train_indices(self, i: int) -> np.ndarray:
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))

    def test_indices(self, i: int) -> np.ndarray:
        return np.sort(self.folds[i])

    def to_json(self) -> str:
        return json.dumps(
            {"mode": self.mode, "seed": self.seed, "folds": [f.tolist() for f in self.folds]}
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls([np.asarray(f, dtype=np.int64) for f in d["folds"]], d["mode"], d["seed"])


def split_intra(n_samples: int, K: int, seed: int = 0, block_size: int = 1) -> FoldPlan:
    """Shuffle samples and deal them into ``K`` folds whose sizes differ by at most one.

    With ``block_size > 1`` consecutive runs of that many samples are kept
    together (e.g. all windows of one clip), and the size rule applies to
    blocks instead of samples.
    """
    if K < 2:
        raise ValidationError(f"K must be at least 2, got {K}")
    if block_size < 1:
        raise ValidationError(f"block_size must be positive, got {block_size}")
    n_blocks = -(-n_samples // block_size)
    if K > n_blocks:
        raise ValidationError(f"K={K} exceeds the number of samples/blocks ({n_blocks})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_blocks)
    folds = []
    for part in np.array_split(perm, K):
        idx = [np.arange(b * block_size, min((b + 1) * block_size, n_samples)) for b in part]
        folds.append(np.concatenate(idx).astype(np.int64))
    return FoldPlan(folds, "intra", seed)


def split_cross(subjects, K: int, seed: int = 0) -> FoldPlan:
    """Assign whole subjects to folds.

    Subjects are shuffled; the first ``K-1`` folds get ``S // K`` subjects
    each and the last fold takes the remainder (123 subjects, K=10 gives nine
    folds of 12 and one of 15).
    """
    subjects = np.asarray(subjects, dtype=np.int64).reshape(-1)
    uniq = np.unique(subjects)
    S = uniq.size
    if K < 2:
        raise ValidationError(f"K must be at least 2, got {K}")
    if S < K:
        raise ValidationError(f"only {S} distinct subjects for K={K} folds")
    rng = np.random.default_rng(seed)
    order = uniq[rng.permutation(S)]
    per = S // K
    groups = [order[i * per:(i + 1) * per] for i in range(K - 1)] + [order[(K - 1) * per:]]
    folds = [np.flatnonzero(np.isin(subjects, g)).astype(np.int64) for g in groups]
    return FoldPlan(folds, "cross", seed)


def make_plan(mode: str, subjects, K: int, seed: int = 0, block_size: int = 1) -> FoldPlan:
    if mode == "intra":
        return split_intra(len(subjects), K, seed, block_size)
    if mode == "cross":
        return split_cross(subjects, K, seed)
    raise ValidationError(f"unknown split mode {mode!r}")


def subjects_per_fold(plan: FoldPlan, subjects) -> List[int]:
    subjects = np.asarray(subjects)
    return [int(np.unique(subjects[f]).size) for f in plan.folds]


def check_plan(plan: FoldPlan, n_samples: int, subjects: Optional[np.ndarray] = None) -> List[str]:
    """Return a list of violated plan invariants (empty when the plan is sound)."""
    problems = []
    seen = np.zeros(n_samples, dtype=np.int64)
    for f in plan.folds:
        if f.size and (f.min() < 0 or f.max() >= n_samples):
            problems.append("fold index out of range")
            continue
        np.add.at(seen, f, 1)
    if (seen > 1).any():
        problems.append(f"{int((seen > 1).sum())} samples appear in more than one fold")
    if (seen == 0).any():
        problems.append(f"{int((seen == 0).sum())} samples appear in no fold")
    if plan.mode == "cross" and subjects is not None:
        subjects = np.asarray(subjects)
        owner = {}
        for i, f in enumerate(plan.folds):
            for s in np.unique(subjects[f]):
                if owner.setdefault(int(s), i) != i:
                    problems.append(f"subject {int(s)} spans folds {owner[int(s)]} and {i}")
    return problems
