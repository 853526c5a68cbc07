"""Forecast accuracy metrics: MSE, MAE, SMAPE, MAPE, MASE and OWA."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .tensor import DTYPE, ShapeMismatch

DENOM_FLOOR = 1e-8

# Naive-2 reference scores published for the M4 competition (SMAPE, MASE).
M4_NAIVE2 = {
    "Yearly": (16.342, 3.974),
    "Quarterly": (11.012, 1.371),
    "Monthly": (14.427, 1.063),
    "Others": (4.754, 3.280),
    "Average": (13.564, 1.912),
}


class ZeroScale(ZeroDivisionError):
    pass


class InvalidReference(ValueError):
    pass


def _pair(pred, true):
    pred = np.asarray(pred, dtype=DTYPE)
    true = np.asarray(true, dtype=DTYPE)
    if pred.shape != true.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {true.shape}")
    return pred, true


def mse(pred, true) -> float:
    pred, true = _pair(pred, true)
    return float(np.mean((pred - true) ** 2))


def mae(pred, true) -> float:
    pred, true = _pair(pred, true)
    return float(np.mean(np.abs(pred - true)))


def smape(pred, true) -> float:
    """200 * mean(|x - x̂| / (|x| + |x̂|)), in [0, 200]."""
    pred, true = _pair(pred, true)
    denom = np.maximum(np.abs(true) + np.abs(pred), DENOM_FLOOR)
    return float(200.0 * np.mean(np.abs(true - pred) / denom))


def mape(pred, true) -> float:
    pred, true = _pair(pred, true)
    denom = np.maximum(np.abs(true), DENOM_FLOOR)
    return float(100.0 * np.mean(np.abs(true - pred) / denom))


def mase_scale(insample, period: int) -> np.ndarray:
    """Mean absolute seasonal difference of the in-sample series (per channel)."""
    x = np.asarray(insample, dtype=DTYPE)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] <= period:
        raise ValueError(f"in-sample length {x.shape[0]} must exceed period {period}")
    return np.mean(np.abs(x[period:] - x[:-period]), axis=0)


def mase(pred, true, insample, period: int) -> float:
    """Mean absolute error scaled by the in-sample seasonal-naive error.

    For ``(T, D)`` inputs each channel is scaled by its own in-sample scale and
    the channel results are averaged.
    """
    pred, true = _pair(pred, true)
    scale = mase_scale(insample, period)
    if np.any(scale <= 0):
        raise ZeroScale("in-sample series has zero seasonal variation")
    err = np.abs(true - pred)
    if err.ndim == 1:
        err = err[:, None]
    return float(np.mean(err.mean(axis=0) / scale))


def owa(smape_value: float, mase_value: float, smape_naive2: float, mase_naive2: float) -> float:
    if smape_naive2 <= 0 or mase_naive2 <= 0:
        raise InvalidReference("naive-2 reference values must be positive")
    return 0.5 * (smape_value / smape_naive2 + mase_value / mase_naive2)


# -- reference forecasters ------------------------------------------------------------

def repeat_last(history, horizon: int) -> np.ndarray:
    """Carry the last observed row forward."""
    h = np.asarray(history, dtype=DTYPE)
    return np.repeat(h[..., -1:, :], horizon, axis=-2)


def _acf(x: np.ndarray, lag: int) -> float:
    m = x.mean()
    num = np.sum((x[lag:] - m) * (x[:-lag] - m))
    den = np.sum((x - m) ** 2)
    return float(num / den) if den > 0 else 0.0


def seasonality_test(x: np.ndarray, period: int) -> bool:
    """90% autocorrelation test used by the M4 benchmarks."""
    if period <= 1 or len(x) < 3 * period:
        return False
    acfs = [_acf(x, k) for k in range(1, period + 1)]
    limit = 1.645 * np.sqrt((1 + 2 * np.sum(np.square(acfs[:-1]))) / len(x))
    return abs(acfs[-1]) > limit


def seasonal_indices(x: np.ndarray, period: int) -> np.ndarray:
    """Classical multiplicative decomposition indices, one per phase."""
    n = len(x)
    if period % 2 == 0:
        kernel = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        kernel = np.ones(period) / period
    trend = np.convolve(x, kernel, mode="valid")
    offset = (len(kernel) - 1) // 2
    ratios = x[offset:offset + len(trend)] / trend
    phases = (np.arange(len(trend)) + offset) % period
    idx = np.array([ratios[phases == p].mean() for p in range(period)])
    idx = idx * period / idx.sum()
    return idx[np.arange(n) % period]


def naive2(insample, horizon: int, period: int) -> np.ndarray:
    """Seasonally adjusted naive forecast of a univariate series."""
    x = np.asarray(insample, dtype=DTYPE)
    n = len(x)
    if seasonality_test(x, period):
        si = seasonal_indices(x, period)
        future = np.array([si[(n - period + (h % period))] for h in range(horizon)])
        return x[-1] / si[-1] * future
    return np.full(horizon, x[-1])


# -- reports -------------------------------------------------------------------

@dataclass
class MetricsReport:
    mse: float
    mae: float
    smape: float
    mape: float
    mase: Optional[float]
    owa: Optional[float]
    windows: int
    period: int = 1
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("windows", str(self.windows))]
        for key in ("mse", "mae", "smape", "mape", "mase", "owa"):
            val = getattr(self, key)
            rows.append((key.upper(), "-" if val is None else f"{val:.6f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate(pred, true, insample=None, period: int = 1, naive2_ref=None, meta=None) -> MetricsReport:
    """Metrics over a stack of windows ``(N, T, D)``.

    ``insample`` is the matching ``(N, L, D)`` history used for MASE scaling;
    windows whose history has zero seasonal variation are left out of MASE.
    ``naive2_ref`` is an optional ``(smape, mase)`` pair enabling OWA.
    """
    pred, true = _pair(pred, true)
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
        if insample is not None:
            insample = np.asarray(insample)[None]
    mase_val = None
    if insample is not None:
        vals = []
        for p, t, h in zip(pred, true, np.asarray(insample, dtype=DTYPE)):
            try:
                vals.append(mase(p, t, h, period))
            except ZeroScale:
                continue
        mase_val = float(np.mean(vals)) if vals else None
    s = smape(pred, true)
    owa_val = None
    if naive2_ref is not None and mase_val is not None:
        owa_val = owa(s, mase_val, *naive2_ref)
    return MetricsReport(mse(pred, true), mae(pred, true), s, mape(pred, true), mase_val, owa_val,
                         int(pred.shape[0]), period, dict(meta or {}))
