"""Experiment driver: load, split, normalise, train, evaluate, report, sweep."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, load_config
from .data import SpatioTemporalDataset, WindowSpec, load_dataset, load_dataset_dir, split_dataset, zscore_normalize
from .errors import ConfigError
from .metrics import baselines, metrics
from .model import STHSepNet, save_checkpoint
from .train import SplitWindows, evaluate_windows, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REPORT_KEYS = {"schema_version", "seed", "config", "splits", "runtime_s"}
ABLATION_COLUMNS = ["sweep", "value", "seed", "data_hash", "val_mae", "val_rmse", "test_mae", "test_rmse",
                    "runtime_s"]
DEFAULT_SWEEPS = {
    "gamma": [0.0, 0.5, 1.0],
    "k": [2, 3, 4, 5],
    "temporal": [True, False],
}


@dataclass
class ForecastReport:
    seed: int
    config: dict
    splits: dict  # {"val": {"mae", "rmse"}, "test": {...}}
    runtime_s: float
    predictions_path: str | None = None
    extras: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "config": self.config,
            "splits": self.splits,
            "runtime_s": self.runtime_s,
        }
        if self.predictions_path:
            doc["predictions_path"] = self.predictions_path
        return doc

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def validate_report(doc: dict) -> None:
    """Raise ValueError unless ``doc`` follows the report schema."""
    missing = REPORT_KEYS - set(doc)
    if missing:
        raise ValueError(f"report missing keys {sorted(missing)}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc['schema_version']}")
    if not isinstance(doc["seed"], int) or not isinstance(doc["config"], dict):
        raise ValueError("seed must be an int and config an object")
    for split in ("val", "test"):
        s = doc["splits"].get(split)
        if not isinstance(s, dict) or set(s) != {"mae", "rmse"}:
            raise ValueError(f"splits.{split} must hold exactly mae and rmse")
        if not (0 <= s["mae"] <= s["rmse"] + 1e-12):
            raise ValueError(f"splits.{split} violates 0 <= mae <= rmse")
    if not isinstance(doc["runtime_s"], (int, float)) or doc["runtime_s"] < 0:
        raise ValueError("runtime_s must be a non-negative number")


def data_hash(ds: SpatioTemporalDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.values).tobytes())
    if ds.distances is not None:
        h.update(np.ascontiguousarray(ds.distances).tobytes())
    return h.hexdigest()[:16]


def load_from_config(cfg: ModelConfig) -> SpatioTemporalDataset:
    if not cfg.data.values:
        raise ConfigError("no dataset given: set data.values or pass --data")
    path = Path(cfg.data.values)
    if path.is_dir():
        return load_dataset_dir(path)
    return load_dataset(path, cfg.data.coords, cfg.data.edges)


@dataclass
class Prepared:
    ds: SpatioTemporalDataset
    norm: object
    windows: dict  # split name -> SplitWindows
    raw: dict  # split name -> de-normalised (X, Y)


def prepare(cfg: ModelConfig, ds: SpatioTemporalDataset) -> Prepared:
    w = cfg.window
    spec = WindowSpec(w.L, w.H, w.stride)
    train_spec = WindowSpec(w.L, w.H, cfg.train.train_stride)
    splits = split_dataset(ds, cfg.data.split, min_length=w.L + w.H)
    trn, van, ten, norm = zscore_normalize(*splits)
    windows = {
        "train": SplitWindows.from_values(trn.values, train_spec),
        "val": SplitWindows.from_values(van.values, spec),
        "test": SplitWindows.from_values(ten.values, spec),
    }
    raw = {k: (norm.inverse(v.X), norm.inverse(v.Y)) for k, v in windows.items()}
    return Prepared(ds, norm, windows, raw)


def fit(cfg: ModelConfig, prep: Prepared, callback=None):
    model = STHSepNet(cfg, prep.ds.N, prep.ds.distances)
    result = train(model, prep.windows["train"], prep.windows["val"], prep.norm, callback=callback)
    return model, result


def evaluate(model: STHSepNet, prep: Prepared, splits=("val", "test")) -> tuple[dict, dict]:
    supports = model.build_supports()
    scores, preds = {}, {}
    for name in splits:
        mae, rmse, pred = evaluate_windows(model, prep.windows[name], prep.norm, supports)
        scores[name] = {"mae": mae, "rmse": rmse}
        preds[name] = pred
    return scores, preds


def baseline_scores(prep: Prepared, split: str = "test") -> dict[str, tuple[float, float]]:
    X, Y = prep.raw[split]
    return {name: metrics(p, Y) for name, p in baselines(X, Y.shape[1]).items()}


def write_predictions(path, prep: Prepared, split: str, pred: np.ndarray) -> None:
    """Long-format CSV: window, step, node_id, prediction, target."""
    _, Y = prep.raw[split]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "step", "node_id", "prediction", "target"])
        for i in range(pred.shape[0]):
            for h in range(pred.shape[1]):
                for n, nid in enumerate(prep.ds.node_ids):
                    w.writerow([i, h, nid, repr(float(pred[i, h, n])), repr(float(Y[i, h, n]))])


def run(config, out_dir=None, data=None, seed: int | None = None) -> ForecastReport:
    """Train on the configured dataset and report val/test scores of the best checkpoint.

    ``config`` is a path or a ModelConfig.  With ``out_dir`` the report,
    test predictions and checkpoint are written there.
    """
    cfg = config.copy() if isinstance(config, ModelConfig) else load_config(config)
    if data is not None:
        cfg.data.values = str(data)
    if seed is not None:
        cfg.train.seed = seed
    t0 = time.perf_counter()
    ds = load_from_config(cfg)
    cfg.validate(ds.N)
    prep = prepare(cfg, ds)
    model, _ = fit(cfg, prep)
    scores, preds = evaluate(model, prep)
    report = ForecastReport(cfg.train.seed, cfg.to_flat(), scores, time.perf_counter() - t0)
    report.extras["data_hash"] = data_hash(ds)
    report.extras["model"] = model
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_predictions(out / "predictions.csv", prep, "test", preds["test"])
        save_checkpoint(model.store, cfg, out / "checkpoint.json")
        report.predictions_path = str(out / "predictions.csv")
        report.write(out / "report.json")
    return report


def apply_setting(cfg: ModelConfig, sweep: str, value) -> ModelConfig:
    cfg = cfg.copy()
    if sweep == "gamma":
        cfg.fusion.gamma = float(value)
    elif sweep == "k":
        cfg.hypergraph.k = int(value)
    elif sweep == "temporal":
        cfg.model.temporal = bool(value)
    else:
        raise ConfigError(f"unknown sweep {sweep!r}; choose gamma, k or temporal")
    return cfg


def ablate(config, sweep: str, values=None, out_path=None, data=None, seed: int | None = None) -> list[dict]:
    """One training run per setting on shared data and seed; rows also written as CSV."""
    cfg = config.copy() if isinstance(config, ModelConfig) else load_config(config)
    if data is not None:
        cfg.data.values = str(data)
    if seed is not None:
        cfg.train.seed = seed
    values = DEFAULT_SWEEPS.get(sweep) if values is None else list(values)
    if values is None:
        raise ConfigError(f"unknown sweep {sweep!r}; choose gamma, k or temporal")
    ds = load_from_config(cfg)
    rows = []
    for value in values:
        setting = apply_setting(cfg, sweep, value)
        setting.validate(ds.N)
        t0 = time.perf_counter()
        prep = prepare(setting, ds)
        model, _ = fit(setting, prep)
        scores, _ = evaluate(model, prep)
        rows.append({
            "sweep": sweep,
            "value": value,
            "seed": setting.train.seed,
            "data_hash": data_hash(ds),
            "val_mae": scores["val"]["mae"],
            "val_rmse": scores["val"]["rmse"],
            "test_mae": scores["test"]["mae"],
            "test_rmse": scores["test"]["rmse"],
            "runtime_s": time.perf_counter() - t0,
        })
        log.info("ablate %s=%s -> %s", sweep, value, scores)
    if out_path is not None:
        write_ablation_csv(out_path, rows)
    return rows


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
