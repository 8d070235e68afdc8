"""Command-line front end: ``run``, ``sweep``, ``synth`` and ``extract``.

Exit codes: 0 ok, 2 config, 3 data, 4 divergence, 5 leakage-audit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .config import ExperimentConfig, config_from_dict, parse_config
from .dataio import Dataset, SynthSpec, load_dataset, save_dataset, synth_generate
from .errors import ConfigError, DataError, EEGGNNError
from .features import DEFAULT_BANDS, BandDef, RawRecording, extract_de, smooth_features
from .graph import init_adjacency, load_positions
from .models import ModelFactory
from .protocols import ProtocolResult, cv_run, fcv_run, ncv_run
from .splitting import make_plan

log = logging.getLogger("eeggnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_LEAKAGE = 0, 2, 3, 4, 5


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def load_experiment_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.get("synth") is not None:
        return synth_generate(cfg.synth_spec())
    try:
        ds = load_dataset(cfg.dataset["path"])
    except OSError as exc:
        raise DataError(f"cannot read dataset {cfg.dataset['path']}: {exc}") from exc
    n = cfg.task.get("n_classes")
    if n is not None and n != ds.n_classes:
        raise ConfigError(f"task.n_classes={n} but dataset declares {ds.n_classes}")
    return ds


def _adjacency_init(cfg: ExperimentConfig, n_nodes: int) -> Optional[np.ndarray]:
    m = cfg.model
    if m["positions"] is None:
        return None
    pos = load_positions(m["positions"]) if isinstance(m["positions"], str) else np.asarray(m["positions"], float)
    if pos.shape[0] != n_nodes:
        raise ConfigError(f"model.positions: {pos.shape[0]} electrodes for {n_nodes} nodes")
    pairs = [tuple(p) for p in (m["global_pairs"] or [])]
    return init_adjacency(pos, m["delta"], pairs, m["global_weight"])


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ProtocolResult:
    ds = load_experiment_data(cfg)
    mcfg = cfg.model_config(ds.n_nodes, ds.n_features, ds.n_classes, _adjacency_init(cfg, ds.n_nodes))
    factory = ModelFactory(mcfg)
    tcfg = cfg.train_config()
    p = cfg.protocol
    T = tcfg.max_epochs
    if p["kind"] == "ncv":
        plan = make_plan(cfg.task["split"], ds.subjects, p["K"], p["seed"], cfg.task["block_size"])
        return ncv_run(factory, ds, p["K"], p["K_inner"], T, cfg.grid_points(), tcfg, seed=p["seed"],
                       jobs=jobs, plan=plan)
    plan = make_plan(cfg.task["split"], ds.subjects, p["K"], p["seed"], cfg.task["block_size"])
    run = cv_run if p["kind"] == "cv" else fcv_run
    return run(lambda s: factory(s), ds, plan, tcfg, T, jobs=jobs)


def acc_matrix_rows(result: ProtocolResult) -> List[List[str]]:
    """One row per (outer) fold. For NCV the row is the inner averaged curve of the selected grid point."""
    if result.protocol == "ncv":
        rows = result.details["selected_inner_curve"]
    else:
        rows = result.acc_matrix.acc.tolist()
    return [[repr(float(v)) for v in row] for row in rows]


def cmd_run(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> int:
    out = Path(out_dir)
    t0 = time.time()
    result = run_experiment(cfg, jobs=jobs)
    wall = time.time() - t0
    meta = {
        "resolved_config": cfg.to_dict(),
        "seeds": {"train": cfg.train["seed"], "split": cfg.protocol["seed"]},
        "wall_time_s": wall,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {"eeggnn": __version__, "torch": torch.__version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "warnings": cfg.warnings,
    }
    _write_atomic(out / "results.json", json.dumps(result.to_dict()) + "\n")
    _write_atomic(out / "acc_matrix.csv", _csv_text(acc_matrix_rows(result)))
    _write_atomic(out / "run_meta.json", json.dumps(meta, indent=2) + "\n")
    log.info("%s summary accuracy %.4f (%.1fs)", result.protocol, result.summary_accuracy, wall)
    return EXIT_OK


def _override(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    doc = cfg.to_dict()
    if axis == "learning_rate":
        doc["train"]["learning_rate"] = float(value)
    else:
        doc["model"]["hidden_dim"] = int(value)
    if doc["protocol"]["kind"] == "ncv":
        doc["protocol"]["grid"][axis] = [doc["train" if axis == "learning_rate" else "model"][axis]]
    else:
        doc["protocol"]["K_inner"] = None
    return config_from_dict(doc)


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, out_dir, jobs: int = 1) -> int:
    """Run once per value of ``axis``; writes ``sweep.csv`` with one row per value."""
    if axis not in ("learning_rate", "hidden_dim"):
        raise ConfigError(f"sweep axis must be learning_rate or hidden_dim, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    cast = float if axis == "learning_rate" else int
    uniq = list(dict.fromkeys(cast(v) for v in values))
    if len(uniq) < len(values):
        log.warning("duplicate sweep values removed: %s -> %s", list(values), uniq)
    out = Path(out_dir)
    rows = [["value", "summary_accuracy", "status"]]
    for v in uniq:
        try:
            cmd_run(_override(cfg, axis, v), out / f"{axis}={v}", jobs=jobs)
            res = json.loads((out / f"{axis}={v}" / "results.json").read_text())
            rows.append([repr(v), repr(res["summary_accuracy"]), "ok"])
        except EEGGNNError as exc:
            log.error("sweep cell %s=%s failed: %s", axis, v, exc)
            rows.append([repr(v), "", f"failed:{type(exc).__name__}"])
    _write_atomic(out / "sweep.csv", _csv_text(rows))
    return EXIT_OK


def cmd_synth(spec_file, out_dir) -> int:
    try:
        doc = json.loads(Path(spec_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read synth spec {spec_file}: {exc}") from exc
    try:
        spec = SynthSpec(**doc)
    except TypeError as exc:
        raise ConfigError(f"{spec_file}: {exc}") from exc
    save_dataset(synth_generate(spec), out_dir)
    return EXIT_OK


def cmd_extract(manifest_file, out_dir) -> int:
    """Build a dataset from raw recordings listed in a JSON manifest.

    Manifest: ``{"fs_hz": 250, "window_sec": 1.0, "lds": true, "n_classes": 2,
    "bands": [[name, lo, hi], ...], "recordings": [{"path": "r.npy", "label": 0,
    "subject": 3}, ...]}``; each ``.npy`` holds ``[n_channels, n_timesteps]``.
    """
    manifest_file = Path(manifest_file)
    try:
        doc = json.loads(manifest_file.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_file}: {exc}") from exc
    try:
        fs = float(doc["fs_hz"])
        recs = doc["recordings"]
    except KeyError as exc:
        raise ConfigError(f"manifest: missing key {exc}") from exc
    bands = [BandDef(*b) for b in doc["bands"]] if doc.get("bands") else list(DEFAULT_BANDS)
    window = float(doc.get("window_sec", 1.0))
    feats, labels, subjects = [], [], []
    for k, r in enumerate(recs):
        path = Path(r["path"])
        if not path.is_absolute():
            path = manifest_file.parent / path
        try:
            signal = np.load(path)
        except OSError as exc:
            raise DataError(f"recordings[{k}]: cannot read {path}: {exc}") from exc
        de = extract_de(RawRecording(signal, fs), bands, window)
        if doc.get("lds", True) and de.shape[0] > 1:
            de = smooth_features(de)
        feats.append(de)
        labels += [int(r["label"])] * de.shape[0]
        subjects += [int(r["subject"])] * de.shape[0]
    n_classes = int(doc.get("n_classes", max(labels) + 1))
    ds = Dataset(np.concatenate(feats), labels, subjects, n_classes, [b.name for b in bands])
    save_dataset(ds, out_dir)
    return EXIT_OK


def _load_cfg(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        doc = cfg.to_dict()
        doc["train"]["seed"] = args.seed
        doc["protocol"]["seed"] = args.seed
        cfg = config_from_dict(doc, base_dir=cfg.base_dir)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeggnn", description="GNN benchmarking for EEG feature data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one validation protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("sweep", help="sensitivity sweep over learning_rate or hidden_dim")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True, choices=["learning_rate", "hidden_dim"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="DE(+LDS) features from raw recordings")
    p.add_argument("--config", required=True, help="JSON manifest of recordings")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(_load_cfg(args), args.out, jobs=args.jobs)
        if args.command == "sweep":
            values = [v for v in args.values.split(",") if v.strip()]
            return cmd_sweep(_load_cfg(args), args.axis, values, args.out, jobs=args.jobs)
        if args.command == "synth":
            return cmd_synth(args.config, args.out)
        return cmd_extract(args.config, args.out)
    except EEGGNNError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA
    except ValueError as exc:
        log.error("invalid value: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
