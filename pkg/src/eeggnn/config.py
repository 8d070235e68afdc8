"""JSON experiment configuration: parsing, validation and default filling.

A config has five sections::

    {
      "dataset":  {"path": "data/"}  or  {"synth": {...SynthSpec fields...}},
      "task":     {"split": "intra" | "cross", "n_classes": 2, "block_size": 1},
      "model":    {"kind": "dgcnn", "hidden_dim": 20, "n_layers": 2, ...},
      "protocol": {"kind": "cv" | "fcv" | "ncv", "K": 10, "K_inner": 3, "seed": 0,
                   "grid": {"learning_rate": [...], "hidden_dim": [...]}},
      "train":    {"learning_rate": 1e-3, "dropout": 0.5, "l1_coef": ..., "l2_coef": ...,
                   "batch_size": 256, "max_epochs": 100, "optimizer": "adam",
                   "seed": 0, "device": "cpu"}
    }

Every error message names the offending JSON path (``train.dropout``).
"""

from __future__ import annotations

import copy
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .dataio import SynthSpec
from .errors import ConfigError
from .models import KINDS, OPTIMIZERS, STREAMS, ModelConfig, TrainConfig

log = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_K_INNER = 3
DEFAULT_HIDDEN_GRID = [20, 40, 80]
DEFAULT_LR_GRID = [1e-4, 1e-3, 1e-2]
# L1 and L2 weight per benchmark task; anything else gets 0.001.
TASK_REGULARIZATION = {"intra-2": 0.001, "cross-2": 0.003, "intra-9": 0.003, "cross-9": 0.005}
DEFAULT_REGULARIZATION = 0.001

_NUM = (int, float)
_ANY = object()

_SCHEMA = {
    "dataset": {"path": (str, None), "synth": (dict, None)},
    "task": {"split": (str, "intra"), "n_classes": (int, None), "block_size": (int, 1)},
    "model": {
        "kind": (str, "dgcnn"),
        "hidden_dim": (int, 20),
        "n_layers": (int, 2),
        "activation": (str, "relu"),
        "node_dat": (bool, False),
        "node_dat_beta": (_NUM, 1.0),
        "emotion_dl_eps": (_NUM, 0.0),
        "neighbor_map": (dict, None),
        "adj_l1": (_NUM, 0.0),
        "streams": (str, "spectral_only"),
        "positions": ((str, list), None),
        "delta": (_NUM, 1.0),
        "global_pairs": (list, None),
        "global_weight": (_NUM, -1.0),
    },
    "protocol": {
        "kind": (str, "ncv"),
        "K": (int, DEFAULT_K),
        "K_inner": (int, None),
        "seed": (int, 0),
        "grid": (dict, None),
    },
    "train": {
        "learning_rate": (_NUM, 1e-3),
        "dropout": (_NUM, 0.5),
        "l1_coef": (_NUM, None),
        "l2_coef": (_NUM, None),
        "batch_size": (int, 256),
        "max_epochs": (int, 100),
        "optimizer": (str, "adam"),
        "seed": (int, 0),
        "device": (str, "cpu"),
    },
}
_SYNTH_SCHEMA = {
    "n_subjects": (int, None),
    "samples_per_subject": (int, None),
    "n_nodes": (int, None),
    "n_features": (int, None),
    "n_classes": (int, None),
    "class_separation": (_NUM, 1.0),
    "subject_shift": (_NUM, 0.0),
    "noise_std": (_NUM, 1.0),
    "seed": (int, 0),
}
_GRID_KEYS = {"learning_rate": _NUM, "hidden_dim": int}


def _type_ok(value, types) -> bool:
    if types is _ANY:
        return True
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def _type_name(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    names = {int: "integer", float: "number", str: "string", bool: "boolean", dict: "object", list: "array"}
    return " or ".join(dict.fromkeys(names.get(t, t.__name__) for t in types))


def _section(obj, path: str, schema: dict) -> dict:
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in obj:
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
    out = {}
    for key, (types, default) in schema.items():
        if key in obj and obj[key] is not None:
            if not _type_ok(obj[key], types):
                raise ConfigError(f"{path}.{key}: expected {_type_name(types)}, got {obj[key]!r}")
            out[key] = obj[key]
        else:
            out[key] = copy.deepcopy(default)
    return out


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


@dataclass
class ExperimentConfig:
    dataset: Dict[str, Any]
    task: Dict[str, Any]
    model: Dict[str, Any]
    protocol: Dict[str, Any]
    train: Dict[str, Any]
    warnings: List[str] = field(default_factory=list)
    base_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in ("dataset", "task", "model", "protocol", "train")}

    @property
    def task_name(self) -> Optional[str]:
        n = self.task.get("n_classes")
        return f"{self.task['split']}-{n}" if n is not None else None

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=float(t["learning_rate"]), l1_coef=float(t["l1_coef"]), l2_coef=float(t["l2_coef"]),
            batch_size=t["batch_size"], max_epochs=t["max_epochs"], optimizer=t["optimizer"],
            seed=t["seed"], device=t["device"],
        )

    def grid_points(self) -> List[Dict[str, Any]]:
        """Cartesian product of the grid axes, learning rate varying fastest."""
        grid = self.protocol["grid"] or {}
        hidden = grid.get("hidden_dim") or [self.model["hidden_dim"]]
        lrs = grid.get("learning_rate") or [self.train["learning_rate"]]
        return [{"hidden_dim": int(h), "learning_rate": float(lr)} for h, lr in itertools.product(hidden, lrs)]

    def model_config(self, n_nodes: int, n_features: int, n_classes: int,
                     adjacency_init: Optional[np.ndarray] = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            kind=m["kind"], n_classes=n_classes, n_nodes=n_nodes, n_features=n_features,
            hidden_dim=m["hidden_dim"], n_layers=m["n_layers"], dropout=float(self.train["dropout"]),
            activation=m["activation"], node_dat=m["node_dat"], node_dat_beta=float(m["node_dat_beta"]),
            emotion_dl_eps=float(m["emotion_dl_eps"]), neighbor_map=m["neighbor_map"],
            adj_l1=float(m["adj_l1"]), streams=m["streams"],
            adjacency_init=None if adjacency_init is None else adjacency_init.tolist(),
        )

    def synth_spec(self) -> Optional[SynthSpec]:
        s = self.dataset.get("synth")
        return None if s is None else SynthSpec(**s)


def config_from_dict(doc: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    for key in doc:
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown key")
    sec = {name: _section(doc.get(name), name, schema) for name, schema in _SCHEMA.items()}
    warnings: List[str] = []

    ds = sec["dataset"]
    _require((ds["path"] is None) != (ds["synth"] is None), "dataset", "give exactly one of 'path' or 'synth'")
    if ds["synth"] is not None:
        ds["synth"] = _section(ds["synth"], "dataset.synth", _SYNTH_SCHEMA)
        for key in ("n_subjects", "samples_per_subject", "n_nodes", "n_features", "n_classes"):
            _require(ds["synth"][key] is not None, f"dataset.synth.{key}", "required")
    elif base_dir is not None and not Path(ds["path"]).is_absolute():
        ds["path"] = str((Path(base_dir) / ds["path"]).resolve())

    task = sec["task"]
    _require(task["split"] in ("intra", "cross"), "task.split", f"must be 'intra' or 'cross', got {task['split']!r}")
    _require(task["block_size"] >= 1, "task.block_size", "must be positive")
    if task["n_classes"] is None and ds["synth"] is not None:
        task["n_classes"] = ds["synth"]["n_classes"]
    if task["n_classes"] is not None:
        _require(task["n_classes"] >= 1, "task.n_classes", "must be positive")

    m = sec["model"]
    _require(m["kind"] in KINDS, "model.kind", f"must be one of {list(KINDS)}, got {m['kind']!r}")
    _require(m["hidden_dim"] >= 1, "model.hidden_dim", "must be positive")
    _require(m["n_layers"] >= 1, "model.n_layers", "must be positive")
    _require(m["activation"] == "relu", "model.activation", "only 'relu' is supported")
    _require(0 <= m["emotion_dl_eps"] < 1, "model.emotion_dl_eps", "must lie in [0, 1)")
    _require(m["node_dat_beta"] >= 0, "model.node_dat_beta", "must be nonnegative")
    _require(m["adj_l1"] >= 0, "model.adj_l1", "must be nonnegative")
    _require(m["streams"] in STREAMS, "model.streams", f"must be one of {list(STREAMS)}")
    _require(m["delta"] > 0, "model.delta", "must be positive")
    if (m["node_dat"] or m["emotion_dl_eps"] or m["global_pairs"]) and m["kind"] != "rgnn":
        raise ConfigError("model: node_dat, emotion_dl_eps and global_pairs require kind 'rgnn'")
    if m["global_pairs"]:
        _require(m["positions"] is not None, "model.global_pairs", "needs model.positions")
        _require(m["global_weight"] < 0, "model.global_weight", "must be negative")
        for k, pair in enumerate(m["global_pairs"]):
            _require(isinstance(pair, list) and len(pair) == 2 and all(type(v) is int for v in pair),
                     f"model.global_pairs[{k}]", "expected [i, j] integer pair")
    if isinstance(m["positions"], str) and base_dir is not None and not Path(m["positions"]).is_absolute():
        m["positions"] = str((Path(base_dir) / m["positions"]).resolve())
    if m["streams"] == "dual":
        warnings.append("model.streams: 'dual' needs raw time series; datasets carry features only, "
                        "using 'spectral_only'")
        m["streams"] = "spectral_only"

    p = sec["protocol"]
    _require(p["kind"] in ("cv", "fcv", "ncv"), "protocol.kind", f"must be cv, fcv or ncv, got {p['kind']!r}")
    _require(p["K"] >= 2, "protocol.K", "must be at least 2")
    if p["kind"] == "ncv":
        if p["K_inner"] is None:
            p["K_inner"] = DEFAULT_K_INNER
        _require(p["K_inner"] >= 2, "protocol.K_inner", "must be at least 2")
        grid = p["grid"] if p["grid"] is not None else {}
        for key in grid:
            _require(key in _GRID_KEYS, f"protocol.grid.{key}", "unknown key")
        out_grid = {}
        for key, default in (("hidden_dim", DEFAULT_HIDDEN_GRID), ("learning_rate", DEFAULT_LR_GRID)):
            vals = grid.get(key, list(default))
            _require(isinstance(vals, list) and len(vals) > 0, f"protocol.grid.{key}", "expected a non-empty array")
            for k, v in enumerate(vals):
                _require(_type_ok(v, _GRID_KEYS[key]) and v > 0, f"protocol.grid.{key}[{k}]",
                         f"expected a positive {_type_name(_GRID_KEYS[key])}, got {v!r}")
            out_grid[key] = list(vals)
        p["grid"] = out_grid
    else:
        _require(p["K_inner"] is None, "protocol.K_inner", "only valid for protocol kind 'ncv'")
        if p["grid"]:
            warnings.append(f"protocol.grid: ignored for protocol kind {p['kind']!r} (only ncv tunes a grid)")
        p["grid"] = None

    t = sec["train"]
    _require(t["learning_rate"] >= 0, "train.learning_rate", "must be nonnegative")
    _require(0 <= t["dropout"] < 1, "train.dropout", f"must lie in [0, 1), got {t['dropout']}")
    _require(t["batch_size"] >= 1, "train.batch_size", "must be positive")
    _require(t["max_epochs"] >= 1, "train.max_epochs", "must be positive")
    _require(t["optimizer"] in OPTIMIZERS, "train.optimizer", f"must be one of {list(OPTIMIZERS)}")
    name = f"{task['split']}-{task['n_classes']}" if task["n_classes"] is not None else None
    reg = TASK_REGULARIZATION.get(name, DEFAULT_REGULARIZATION)
    for key in ("l1_coef", "l2_coef"):
        if t[key] is None:
            t[key] = reg
        _require(t[key] >= 0, f"train.{key}", "must be nonnegative")

    cfg = ExperimentConfig(ds, task, m, p, t, warnings, None if base_dir is None else str(base_dir))
    for w in warnings:
        log.warning(w)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Load a config file. A ``run_meta.json`` written by ``run`` is accepted too."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(doc, dict) and "resolved_config" in doc:
        doc = doc["resolved_config"]
    return config_from_dict(doc, base_dir=path.parent)
