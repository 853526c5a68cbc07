"""Series ingestion, chronological splits, sliding windows and input noise."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tensor import DTYPE

logger = logging.getLogger(__name__)

TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime"}

# M4 horizons and seasonal periods per frequency subset.
M4_HORIZONS = {"Yearly": 6, "Quarterly": 8, "Monthly": 18, "Weekly": 13, "Daily": 14, "Hourly": 48}
M4_PERIODS = {"Yearly": 1, "Quarterly": 4, "Monthly": 12, "Weekly": 1, "Daily": 1, "Hourly": 24}

# Standard long-term benchmark layouts.  ETT files use fixed month-based borders;
# the others use a 0.7 / rest / 0.2 chronological split.
_ETT_HOURLY = {"ETTh1", "ETTh2"}
_ETT_MINUTE = {"ETTm1", "ETTm2"}
STANDARD_ROWS = {
    "ETTh1": 17420, "ETTh2": 17420, "ETTm1": 69680, "ETTm2": 69680,
    "Electricity": 26304, "Traffic": 17544, "Weather": 52696, "Exchange": 7588, "ILI": 966,
}


class ParseError(ValueError):
    pass


class MissingColumn(KeyError):
    pass


class TooShort(ValueError):
    pass


class EmptySplit(ValueError):
    pass


@dataclass
class RawSeries:
    values: np.ndarray
    columns: list[str]
    timestamps: Optional[list[str]] = None
    rejected_rows: int = 0

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


def load_csv(path, columns: Optional[Sequence[str]] = None) -> RawSeries:
    """Read a headered CSV; a leading date/time column is kept aside.

    ``columns`` selects and orders the numeric columns (default: all).  Rows
    with an empty or NaN cell are dropped and counted, never imputed.
    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        has_ts = header[0].lower() in TIMESTAMP_NAMES
        numeric = header[1:] if has_ts else header
        wanted = list(columns) if columns is not None else numeric
        for name in wanted:
            if name not in numeric:
                raise MissingColumn(f"{path}: no column {name!r}")
        col_idx = [header.index(name) for name in wanted]
        rows, stamps, rejected = [], [], 0
        for rownum, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {rownum} has {len(rec)} fields, expected {len(header)}")
            vals, gap = [], False
            for i, name in zip(col_idx, wanted):
                cell = rec[i].strip()
                if cell == "" or cell.lower() in ("nan", "na"):
                    gap = True
                    break
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
            if gap:
                rejected += 1
                continue
            rows.append(vals)
            if has_ts:
                stamps.append(rec[0])
    if rejected:
        logger.warning("%s: rejected %d row(s) with missing values", path, rejected)
    values = np.array(rows, dtype=DTYPE).reshape(len(rows), len(wanted))
    return RawSeries(values, wanted, stamps if has_ts else None, rejected)


def write_csv(path, values: np.ndarray, columns: Sequence[str], with_date: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["date"] if with_date else []) + list(columns))
        for i, row in enumerate(values):
            w.writerow(([str(i)] if with_date else []) + [repr(float(v)) for v in row])


# -- windows -------------------------------------------------------------------

@dataclass
class WindowSplit:
    """Window pairs whose history starts at ``starts[i]``; built lazily by index."""

    data: np.ndarray
    starts: np.ndarray
    history_len: int
    horizon: int
    border: tuple[int, int]

    def __len__(self):
        return len(self.starts)

    def window(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = int(self.starts[i])
        L = self.history_len
        return self.data[s:s + L], self.data[s + L:s + L + self.horizon]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        s = self.starts[idx]
        hist = np.arange(self.history_len)
        tgt = np.arange(self.history_len, self.history_len + self.horizon)
        return self.data[s[:, None] + hist], self.data[s[:, None] + tgt]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.batch(np.arange(len(self)))


@dataclass
class WindowedDataset:
    train: WindowSplit
    val: WindowSplit
    test: WindowSplit
    history_len: int
    horizon: int
    borders: dict
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    columns: list[str] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return self.train.data.shape[1]

    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def history_counts(self) -> tuple[int, int, int]:
        """Number of history positions per split (span - L + 1), ignoring the target."""
        L = self.history_len
        return tuple(b - a - L + 1 for a, b in (self.borders[k] for k in ("train", "val", "test")))


def standard_borders(name: str, total_rows: int, history_len: int) -> dict:
    """Row ranges per split; val/test ranges start ``history_len`` rows early."""
    L = history_len
    if name in _ETT_HOURLY or name in _ETT_MINUTE:
        unit = 30 * 24 * (4 if name in _ETT_MINUTE else 1)
        n_train, n_val, n_test = 12 * unit, 4 * unit, 4 * unit
    else:
        n_train = int(total_rows * 0.7)
        n_test = int(total_rows * 0.2)
        n_val = total_rows - n_train - n_test
    a, b = n_train, n_train + n_val
    return {"train": (0, a), "val": (a - L, b), "test": (b - L, b + n_test)}


def ratio_borders(total_rows: int, history_len: int, ratios=(0.7, 0.1, 0.2)) -> dict:
    r_train, _, r_test = ratios
    n_train = int(total_rows * r_train)
    n_test = int(total_rows * r_test)
    n_val = total_rows - n_train - n_test
    a, b = n_train, n_train + n_val
    return {"train": (0, a), "val": (a - history_len, b), "test": (b - history_len, total_rows)}


def split_and_window(raw, history_len: int, horizon: int, borders: Optional[dict] = None,
                     ratios=(0.7, 0.1, 0.2), standardize: bool = False) -> WindowedDataset:
    """Chronological split into stride-1 windows.

    A window's history may reach back across a split border; its target never
    does.  With ``standardize`` the series is z-scored with train statistics.
    """
    values = raw.values if isinstance(raw, RawSeries) else np.asarray(raw, dtype=DTYPE)
    columns = list(raw.columns) if isinstance(raw, RawSeries) else []
    if values.ndim == 1:
        values = values[:, None]
    n = len(values)
    L, T = history_len, horizon
    if n <= L + T:
        raise TooShort(f"{n} rows cannot hold a window of {L} + {T}")
    if borders is None:
        borders = ratio_borders(n, L, ratios)
    mean = std = None
    data = values
    if standardize:
        a, b = borders["train"]
        mean = values[a:b].mean(axis=0)
        std = values[a:b].std(axis=0)
        std = np.where(std > 0, std, 1.0)
        data = (values - mean) / std
    splits = {}
    for key in ("train", "val", "test"):
        a, b = borders[key]
        a, b = max(a, 0), min(b, n)
        count = b - a - L - T + 1
        if count < 1:
            raise TooShort(f"{key} split [{a}, {b}) holds no window of {L} + {T}")
        splits[key] = WindowSplit(data, np.arange(a, a + count), L, T, (a, b))
    return WindowedDataset(splits["train"], splits["val"], splits["test"], L, T, borders, mean, std, columns)


def all_train_windows(values, history_len: int, horizon: int) -> WindowSplit:
    data = np.asarray(values, dtype=DTYPE)
    if data.ndim == 1:
        data = data[:, None]
    count = len(data) - history_len - horizon + 1
    if count < 1:
        raise TooShort(f"{len(data)} rows cannot hold a window of {history_len} + {horizon}")
    return WindowSplit(data, np.arange(count), history_len, horizon, (0, len(data)))


# -- noise and synthetic fixtures --------------------------------------------------

def inject_noise(series, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """``series + S * alpha * N(0, 1)`` with S the per-channel std over the window."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(series, dtype=DTYPE)
    if alpha == 0:
        return x.copy()
    S = x.std(axis=-2, keepdims=True)
    return x + S * alpha * rng.standard_normal(x.shape)


def sine_series(length: int, period: int = 24, noise_std: float = 0.05, channels: int = 1,
                seed: int = 0) -> np.ndarray:
    """Unit-amplitude sine per channel (phase-shifted) plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)[:, None]
    phase = 2 * math.pi * np.arange(channels)[None, :] / max(channels, 1) / 3
    clean = np.sin(2 * math.pi * t / period + phase)
    return clean + noise_std * rng.standard_normal((length, channels))


# -- M4 ----------------------------------------------------------------------------

@dataclass
class M4Series:
    ident: str
    insample: np.ndarray
    outsample: np.ndarray


def _read_ragged(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rownum, rec in enumerate(reader, start=1):
            if not rec:
                continue
            ident = rec[0].strip().strip('"')
            cells = [c.strip().strip('"') for c in rec[1:]]
            while cells and cells[-1] in ("", "NA", "nan"):
                cells.pop()
            try:
                out[ident] = np.array([float(c) for c in cells], dtype=DTYPE)
            except ValueError:
                raise ParseError(f"{path}: row {rownum} ({ident}) has an interior gap or bad value") from None
    return out


def load_m4(train_path, test_path) -> list[M4Series]:
    """M4 competition layout: one row per series, id then values, trailing blanks."""
    train = _read_ragged(train_path)
    test = _read_ragged(test_path)
    missing = set(train) ^ set(test)
    if missing:
        raise ParseError(f"series present in only one file: {sorted(missing)[:5]}")
    return [M4Series(k, train[k], test[k]) for k in train]
