"""Dataset container, its on-disk format and a synthetic generator.

On disk a dataset is a directory::

    meta.json      n_samples, n_nodes, n_features, n_classes, band_names, format_version
    features.bin   little-endian float32, row-major sample -> node -> feature
    labels.bin     little-endian int32
    subjects.bin   little-endian int32
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    FormatVersionError,
    LabelRangeError,
    MissingFileError,
    NonFiniteError,
    SizeMismatchError,
    ValidationError,
)

FORMAT_VERSION = 1
FEATURE_DTYPE = np.dtype("<f4")
INDEX_DTYPE = np.dtype("<i4")
CSV_MAX_WIDTH = 1024


@dataclass(eq=False)
class Dataset:
    """Sample-major features with per-sample label and subject id.

    ``features`` has shape ``[n_samples, n_nodes, n_features]`` and is kept in
    float32 so that saving and reloading is bit-exact.
    """

    features: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    n_classes: int
    band_names: Optional[List[str]] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.subjects = np.asarray(self.subjects, dtype=np.int64).reshape(-1)
        self.n_classes = int(self.n_classes)
        if self.band_names is not None:
            self.band_names = [str(b) for b in self.band_names]
        for arr in (self.features, self.labels, self.subjects):
            arr.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[2])

    def __len__(self):
        return self.n_samples

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx], self.labels[idx], self.subjects[idx], self.n_classes, self.band_names
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            isinstance(other, Dataset)
            and self.n_classes == other.n_classes
            and self.band_names == other.band_names
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.subjects, other.subjects)
        )

    __eq__ = equals
    __hash__ = None


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int
    samples_per_subject: int
    n_nodes: int
    n_features: int
    n_classes: int
    class_separation: float = 1.0
    subject_shift: float = 0.0
    noise_std: float = 1.0
    seed: int = 0


def validate_dataset(ds: Dataset) -> List[str]:
    """Return one message per invariant violation; empty when ``ds`` is valid."""
    report = []
    if ds.features.ndim != 3:
        report.append(f"features must be 3-d [n_samples, n_nodes, n_features], got shape {ds.features.shape}")
        return report
    n = ds.features.shape[0]
    if ds.labels.shape[0] != n:
        report.append(f"labels length {ds.labels.shape[0]} != n_samples {n}")
    if ds.subjects.shape[0] != n:
        report.append(f"subjects length {ds.subjects.shape[0]} != n_samples {n}")
    if ds.n_classes < 1:
        report.append(f"n_classes must be positive, got {ds.n_classes}")
    bad = np.flatnonzero((ds.labels < 0) | (ds.labels >= ds.n_classes))
    for i in bad:
        report.append(f"sample {i}: label {ds.labels[i]} outside [0, {ds.n_classes})")
    bad = np.flatnonzero(ds.subjects < 0)
    for i in bad:
        report.append(f"sample {i}: negative subject id {ds.subjects[i]}")
    finite = np.isfinite(ds.features).reshape(n, -1).all(axis=1)
    for i in np.flatnonzero(~finite):
        report.append(f"sample {i}: non-finite feature value")
    if ds.band_names is not None and len(ds.band_names) != ds.features.shape[2]:
        report.append(f"band_names has {len(ds.band_names)} entries, expected {ds.features.shape[2]}")
    return report


def _check(ds: Dataset):
    report = validate_dataset(ds)
    if report:
        raise ValidationError("invalid dataset: " + "; ".join(report[:5]))


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: Dataset, directory) -> None:
    _check(ds)
    directory = Path(directory)
    meta = {
        "n_samples": ds.n_samples,
        "n_nodes": ds.n_nodes,
        "n_features": ds.n_features,
        "n_classes": ds.n_classes,
        "band_names": ds.band_names,
        "format_version": FORMAT_VERSION,
    }
    blobs = {
        "features.bin": ds.features.astype(FEATURE_DTYPE).tobytes(order="C"),
        "labels.bin": ds.labels.astype(INDEX_DTYPE).tobytes(),
        "subjects.bin": ds.subjects.astype(INDEX_DTYPE).tobytes(),
        "meta.json": (json.dumps(meta, indent=2) + "\n").encode(),
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {directory}: {exc}") from exc
    for name, blob in blobs.items():
        try:
            _atomic_write(directory / name, blob)
        except OSError as exc:
            raise OSError(f"failed writing {directory / name}: {exc}") from exc


def _read_blob(path: Path, dtype: np.dtype, count: int) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"missing dataset file {path}")
    raw = path.read_bytes()
    expected = count * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(f"{path.name}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).copy()


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise MissingFileError(f"missing dataset file {meta_path}")
    meta = json.loads(meta_path.read_text())
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format_version {version!r} in {meta_path}")
    n, nodes, feats = int(meta["n_samples"]), int(meta["n_nodes"]), int(meta["n_features"])
    features = _read_blob(directory / "features.bin", FEATURE_DTYPE, n * nodes * feats)
    labels = _read_blob(directory / "labels.bin", INDEX_DTYPE, n)
    subjects = _read_blob(directory / "subjects.bin", INDEX_DTYPE, n)
    features = features.reshape(n, nodes, feats)
    if not np.isfinite(features).all():
        bad = int(np.flatnonzero(~np.isfinite(features).reshape(n, -1).all(axis=1))[0])
        raise NonFiniteError(f"features.bin: non-finite value in sample {bad}")
    n_classes = int(meta["n_classes"])
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelRangeError(
            f"labels.bin: labels span [{labels.min()}, {labels.max()}] but n_classes={n_classes}"
        )
    ds = Dataset(features, labels, subjects, n_classes, meta.get("band_names"))
    _check(ds)
    return ds


def write_features_csv(ds: Dataset, path) -> None:
    """Write features one sample per row (node-major flattening)."""
    width = ds.n_nodes * ds.n_features
    if width > CSV_MAX_WIDTH:
        raise ValidationError(f"CSV export limited to {CSV_MAX_WIDTH} columns, dataset has {width}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in ds.features.reshape(ds.n_samples, width):
            writer.writerow([repr(float(v)) for v in row])


def read_features_csv(path, n_nodes: int, n_features: int) -> np.ndarray:
    width = n_nodes * n_features
    if width > CSV_MAX_WIDTH:
        raise ValidationError(f"CSV import limited to {CSV_MAX_WIDTH} columns, requested {width}")
    rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if rows.shape[1] != width:
        raise SizeMismatchError(f"{path}: expected {width} columns, found {rows.shape[1]}")
    return rows.astype(np.float32).reshape(-1, n_nodes, n_features)


def class_means(spec: SynthSpec) -> np.ndarray:
    """Class mean tensors ``[n_classes, n_nodes, n_features]`` used by :func:`synth_generate`."""
    n_groups = -(-spec.n_classes // spec.n_features)
    if n_groups > spec.n_nodes:
        raise ValidationError(
            f"n_classes={spec.n_classes} needs {n_groups} node groups but only {spec.n_nodes} nodes exist"
        )
    groups = np.array_split(np.arange(spec.n_nodes), n_groups)
    means = np.zeros((spec.n_classes, spec.n_nodes, spec.n_features))
    for c in range(spec.n_classes):
        nodes = groups[c // spec.n_features]
        means[c, nodes, c % spec.n_features] = spec.class_separation / np.sqrt(nodes.size)
    return means


def synth_generate(spec: SynthSpec) -> Dataset:
    """Gaussian class clusters with per-subject offsets.

    Each class mean is ``class_separation`` times a unit tensor whose support
    is one feature (band) column over a group of nodes: class ``c`` uses
    feature ``c % n_features`` on node group ``c // n_features``. Supports are
    disjoint, so any two class means are exactly ``class_separation * sqrt(2)``
    apart; with ``n_classes <= n_features`` every class spans all nodes. Each
    subject adds one offset tensor drawn from ``N(0, subject_shift**2)`` and
    each sample adds ``N(0, noise_std**2)`` noise.
    """
    for name in ("n_subjects", "samples_per_subject", "n_nodes", "n_features", "n_classes"):
        if int(getattr(spec, name)) < 1:
            raise ValidationError(f"SynthSpec.{name} must be positive, got {getattr(spec, name)}")
    if spec.class_separation < 0 or spec.subject_shift < 0:
        raise ValidationError("class_separation and subject_shift must be nonnegative")
    if not spec.noise_std > 0:
        raise ValidationError(f"noise_std must be positive, got {spec.noise_std}")
    width = spec.n_nodes * spec.n_features
    means = class_means(spec)
    rng = np.random.default_rng(spec.seed)
    offsets = rng.normal(0.0, 1.0, size=(spec.n_subjects, width)) * spec.subject_shift

    per = spec.samples_per_subject
    labels = np.empty(spec.n_subjects * per, dtype=np.int64)
    for s in range(spec.n_subjects):
        labels[s * per:(s + 1) * per] = rng.permutation(np.arange(per) % spec.n_classes)
    subjects = np.repeat(np.arange(spec.n_subjects), per)
    noise = rng.normal(0.0, spec.noise_std, size=(labels.size, width))
    x = means.reshape(spec.n_classes, width)[labels] + offsets[subjects] + noise
    return Dataset(
        x.reshape(-1, spec.n_nodes, spec.n_features), labels, subjects, spec.n_classes
    )
