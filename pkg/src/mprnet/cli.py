"""Batch entry point: ``mprnet {train,eval,forecast,probe,ablate}``.

Settings come from an optional JSON config file; command-line flags win.
Exit status is 0 on success, 2 on usage/config errors and 1 on runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .data import (STANDARD_ROWS, RawSeries, load_csv, sine_series, split_and_window,
                   standard_borders)
from .model import MPRNet, ModelConfig, rng_streams, runtime_scaling_probe
from .tensor import ShapeMismatch
from .training import TrainConfig, predict_split, train, write_history

logger = logging.getLogger("mprnet")

COMMANDS = ("train", "eval", "forecast", "probe", "ablate")
CHECKPOINT = "checkpoint.bin"
HISTORY = "history.jsonl"
RESOLVED = "config.json"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "train"
    dataset: Optional[str] = None
    dataset_name: Optional[str] = None
    columns: Optional[list[str]] = None
    standardize: bool = True
    history_len: int = 96
    horizon: int = 96
    layers: int = 2
    kernel_size: int = 3
    dilations: Optional[list[int]] = None
    query_len: Optional[int] = None
    key_span: Optional[int] = None
    dropout: float = 0.1
    ablation: str = "full"
    softmax_weights: bool = False
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    loss: str = "mse"
    patience: Optional[int] = None
    max_batches: Optional[int] = None
    noise_alpha: float = 0.0
    seed: int = 0
    period: int = 1
    out: str = "runs/latest"
    checkpoint: Optional[str] = None
    probe_lengths: list[int] = field(default_factory=lambda: [96, 192, 384])
    probe_repeats: int = 5

    def model_config(self, channels: int, ablation: Optional[str] = None) -> ModelConfig:
        return ModelConfig(
            history_len=self.history_len, horizon=self.horizon, channels=channels,
            layers=self.layers, kernel_size=self.kernel_size,
            dilations=list(self.dilations) if self.dilations else None,
            query_len=self.query_len, key_span=self.key_span, dropout=self.dropout,
            ablation=ablation or self.ablation, softmax_weights=self.softmax_weights,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr=self.lr, loss=self.loss,
                           patience=self.patience, seed=self.seed, noise_alpha=self.noise_alpha,
                           max_batches=self.max_batches)


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(file_values: dict, overrides: dict) -> RunConfig:
    unknown = (set(file_values) | set(overrides)) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    merged = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    cfg = RunConfig(**merged)
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    return cfg


# -- datasets ----------------------------------------------------------------------

def load_dataset(cfg: RunConfig):
    """Resolve ``cfg.dataset``: a CSV path, or ``builtin:sine`` for the synthetic fixture."""
    if cfg.dataset is None:
        raise ConfigError("no dataset given (--dataset)")
    if cfg.dataset.startswith("builtin:"):
        kind = cfg.dataset.split(":", 1)[1]
        if kind != "sine":
            raise ConfigError(f"unknown builtin dataset {kind!r}")
        raw = RawSeries(sine_series(2000, 24, 0.05, 1, seed=0), ["sine"])
    else:
        path = Path(cfg.dataset)
        if not path.exists():
            raise ConfigError(f"dataset not found: {path}")
        raw = load_csv(path, cfg.columns)
    borders = None
    if cfg.dataset_name in STANDARD_ROWS:
        borders = standard_borders(cfg.dataset_name, len(raw), cfg.history_len)
    return split_and_window(raw, cfg.history_len, cfg.horizon, borders=borders, standardize=cfg.standardize)


# -- output helpers ------------------------------------------------------------------

def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED).write_text(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n")


def write_forecasts(path, pred: np.ndarray, true: Optional[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "step", "channel", "y_true", "y_pred"])
        for i in range(pred.shape[0]):
            for t in range(pred.shape[1]):
                for c in range(pred.shape[2]):
                    yt = "" if true is None else repr(float(true[i, t, c]))
                    w.writerow([i, t, c, yt, repr(float(pred[i, t, c]))])


def _evaluate(model, ds, cfg: RunConfig, meta=None) -> tuple[metrics.MetricsReport, np.ndarray, np.ndarray]:
    noise = rng_streams(cfg.seed)["noise"]
    pred, true, hist = predict_split(model, ds.test, noise_alpha=cfg.noise_alpha, rng=noise)
    report = metrics.evaluate(pred, true, insample=hist, period=cfg.period, meta=meta)
    return report, pred, true


def _train_one(cfg: RunConfig, ds, ablation=None):
    model = MPRNet(cfg.model_config(ds.channels, ablation), seed=cfg.seed)
    result = train(model, ds, cfg.train_config())
    return model, result


# -- commands ---------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    ds = load_dataset(cfg)
    _write_resolved(cfg, out)
    model, result = _train_one(cfg, ds)
    model.save(out / CHECKPOINT)
    write_history(out / HISTORY, result.history)
    print(f"trained {len(result.history)} epoch(s); best epoch {result.best_epoch} "
          f"val {result.best_val:.6f}; wrote {out}")
    return out


def _load_model(cfg: RunConfig, ds) -> MPRNet:
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out) / CHECKPOINT
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model = MPRNet(cfg.model_config(ds.channels), seed=cfg.seed)
    model.load(ckpt)
    return model.eval()


def cmd_eval(cfg: RunConfig) -> metrics.MetricsReport:
    out = Path(cfg.out)
    ds = load_dataset(cfg)
    model = _load_model(cfg, ds)
    _write_resolved(cfg, out)
    report, pred, true = _evaluate(model, ds, cfg, meta={"split": "test"})
    (out / "metrics.json").write_text(report.to_json() + "\n")
    write_forecasts(out / "forecasts.csv", pred, true)
    print(report.table())
    return report


def cmd_forecast(cfg: RunConfig) -> np.ndarray:
    """Forecast the horizon following the last ``history_len`` rows."""
    out = Path(cfg.out)
    ds = load_dataset(cfg)
    model = _load_model(cfg, ds)
    _write_resolved(cfg, out)
    tail = ds.test.data[-cfg.history_len:][None]
    pred = model.predict(tail)
    if ds.std is not None:
        pred = pred * ds.std + ds.mean
    write_forecasts(out / "forecast.csv", pred, None)
    print(f"wrote {out / 'forecast.csv'}")
    return pred[0]


def cmd_probe(cfg: RunConfig) -> list[tuple[int, float]]:
    out = Path(cfg.out)
    _write_resolved(cfg, out)
    channels = 7
    nq = cfg.query_len or 12

    def make(L):
        return ModelConfig(L, cfg.horizon, channels, layers=cfg.layers, kernel_size=cfg.kernel_size,
                           query_len=nq, dropout=cfg.dropout, ablation=cfg.ablation)

    rows = runtime_scaling_probe(make, cfg.probe_lengths, repeats=cfg.probe_repeats, seed=cfg.seed)
    with open(out / "scaling.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["history_len", "median_seconds", "ratio_to_previous"])
        prev = None
        for L, secs in rows:
            w.writerow([L, f"{secs:.6f}", "" if prev is None else f"{secs / prev:.4f}"])
            print(f"L={L:5d}  {secs * 1e3:9.2f} ms" + ("" if prev is None else f"  x{secs / prev:.2f}"))
            prev = secs
    return rows


def cmd_ablate(cfg: RunConfig) -> dict[str, metrics.MetricsReport]:
    out = Path(cfg.out)
    ds = load_dataset(cfg)
    _write_resolved(cfg, out)
    reports = {}
    for variant in ("full", "no_multivariate", "fc_forecaster", "both"):
        model, _ = _train_one(cfg, ds, variant)
        report, _, _ = _evaluate(model, ds, cfg, meta={"variant": variant})
        reports[variant] = report
        (out / f"metrics_{variant}.json").write_text(report.to_json() + "\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mse", "mae", "smape"])
        for variant, r in reports.items():
            w.writerow([variant, f"{r.mse:.6f}", f"{r.mae:.6f}", f"{r.smape:.4f}"])
            print(f"{variant:<16} MSE {r.mse:.6f}  MAE {r.mae:.6f}")
    return reports


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "forecast": cmd_forecast,
            "probe": cmd_probe, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mprnet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--dataset", help="CSV path or builtin:sine")
    p.add_argument("--dataset-name", dest="dataset_name", help="standard split layout, e.g. ETTh1")
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--history-len", dest="history_len", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--noise-alpha", dest="noise_alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ablation")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    try:
        file_values = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                file_values = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = resolve_config(file_values, overrides)
        cfg.model_config(1)  # validate model settings before any work
        cfg.train_config()
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShapeMismatch as exc:
        print(f"error: ShapeMismatch: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface a single-line cause
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
