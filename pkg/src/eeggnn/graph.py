"""Adjacency construction and symmetric degree normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import DegenerateDegreeError, ValidationError

DEGREE_EPS = 1e-12


@dataclass
class GraphSpec:
    n_nodes: int
    adjacency: np.ndarray
    positions: Optional[np.ndarray] = None
    global_pairs: Optional[List[Tuple[int, int]]] = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.shape != (self.n_nodes, self.n_nodes):
            raise ValidationError(f"adjacency shape {self.adjacency.shape} != ({self.n_nodes}, {self.n_nodes})")
        if not np.isfinite(self.adjacency).all():
            raise ValidationError("adjacency contains non-finite values")

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @classmethod
    def fully_connected(cls, n_nodes: int) -> "GraphSpec":
        return cls(n_nodes, np.ones((n_nodes, n_nodes)))


def normalize_adjacency(A) -> np.ndarray:
    """Return ``D^{-1/2} A D^{-1/2}`` with ``D_ii = sum_j A_ij``.

    Signed graphs are handled by using ``|D_ii|``; a node whose ``|D_ii|`` is
    at most 1e-12 raises :class:`DegenerateDegreeError`.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {A.shape}")
    deg = np.abs(A.sum(axis=1))
    bad = np.flatnonzero(deg <= DEGREE_EPS)
    if bad.size:
        raise DegenerateDegreeError(int(bad[0]), float(A[bad[0]].sum()))
    s = 1.0 / np.sqrt(deg)
    return s[:, None] * A * s[None, :]


def normalize_adjacency_torch(A: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of :func:`normalize_adjacency`."""
    deg = A.sum(dim=1).abs()
    if bool((deg <= DEGREE_EPS).any()):
        node = int(torch.nonzero(deg <= DEGREE_EPS)[0, 0])
        raise DegenerateDegreeError(node, float(A[node].sum()))
    s = deg.rsqrt()
    return s[:, None] * A * s[None, :]


def init_adjacency(
    positions,
    delta: float,
    global_pairs: Sequence[Tuple[int, int]] = (),
    global_weight: float = -1.0,
) -> np.ndarray:
    """Distance-based initial adjacency.

    Off-diagonal entries are ``min(1, delta / dist**2)``, the diagonal is 1.
    Each pair in ``global_pairs`` is then overwritten symmetrically with the
    (negative) ``global_weight``.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValidationError(f"positions must be [n, 3], got shape {pos.shape}")
    if not np.isfinite(pos).all():
        raise ValidationError("positions contain non-finite values")
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    n = pos.shape[0]
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    off = ~np.eye(n, dtype=bool)
    if (d2[off] == 0).any():
        i, j = np.argwhere((d2 == 0) & off)[0]
        raise ValidationError(f"electrodes {i} and {j} coincide")
    A = np.ones((n, n))
    A[off] = np.minimum(1.0, delta / d2[off])
    pairs = list(global_pairs or ())
    if pairs and not global_weight < 0:
        raise ValidationError(f"global_weight must be negative, got {global_weight}")
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"global pair ({i}, {j}) out of range for {n} nodes")
        A[i, j] = A[j, i] = global_weight
    return A


def load_positions(path) -> np.ndarray:
    """Read electrode coordinates from a JSON array of ``[x, y, z]`` triples."""
    data = json.loads(Path(path).read_text())
    pos = np.asarray(data, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValidationError(f"{path}: expected a list of [x, y, z] triples")
    return pos
