"""Training losses, the Adam optimiser and the mini-batch loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import MissingGrad, Node
from .data import EmptySplit, WindowSplit, WindowedDataset, inject_noise
from .model import MPRNet, rng_streams
from .tensor import DTYPE, ShapeMismatch

logger = logging.getLogger(__name__)

LOSSES = ("mse", "mae", "smape")


def loss(pred, target, kind: str = "mse") -> Node:
    """Scalar training loss, averaged over every element."""
    pred = ad.as_node(pred)
    target = ad.as_node(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    if kind == "mse":
        return ad.mean(ad.square(diff))
    if kind == "mae":
        return ad.mean(ad.abs_(diff))
    if kind == "smape":
        denom = ad.maximum_const(ad.abs_(pred) + ad.abs_(target), 1e-8)
        return ad.mean(ad.abs_(diff) / denom) * 200.0
    raise ValueError(f"unknown loss {kind!r}")


class Adam:
    """Bias-corrected Adam; moments are kept per parameter in list order."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGrad(f"no gradient for {getattr(p, 'name', p)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, state: Adam) -> None:
    state.step()


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    loss: str = "mse"
    patience: Optional[int] = None
    seed: int = 0
    noise_alpha: float = 0.0
    max_batches: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.noise_alpha < 0:
            raise ValueError("noise_alpha must be >= 0")


@dataclass
class TrainResult:
    model: MPRNet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf


def predict_split(model: MPRNet, split: WindowSplit, batch_size: int = 256,
                  noise_alpha: float = 0.0, rng: Optional[np.random.Generator] = None):
    """Eval-mode forecasts for every window of ``split``: returns (pred, true, history)."""
    preds, trues, hists = [], [], []
    for start in range(0, len(split), batch_size):
        idx = np.arange(start, min(start + batch_size, len(split)))
        x, y = split.batch(idx)
        if noise_alpha > 0:
            x = inject_noise(x, noise_alpha, rng)
        preds.append(model.predict(x))
        trues.append(y)
        hists.append(x)
    return np.concatenate(preds), np.concatenate(trues), np.concatenate(hists)


def _split_loss(model, split, kind, noise_alpha, rng) -> float:
    pred, true, _ = predict_split(model, split, noise_alpha=noise_alpha, rng=rng)
    with ad.no_grad():
        return float(loss(pred, true, kind).value)


def train(model: MPRNet, dataset: WindowedDataset, cfg: TrainConfig) -> TrainResult:
    """Optimise on shuffled mini-batches; keep the parameters with the lowest validation loss."""
    if len(dataset.train) == 0 or len(dataset.val) == 0:
        raise EmptySplit("train and validation splits must be non-empty")
    streams = rng_streams(cfg.seed)
    shuffle, noise = streams["shuffle"], streams["noise"]
    model.set_dropout_rng(streams["dropout"])
    opt = Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult(model)
    best_state = model.state_dict()
    stale = 0
    n = len(dataset.train)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = shuffle.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            if cfg.max_batches is not None and b >= cfg.max_batches:
                break
            x, y = dataset.train.batch(order[start:start + cfg.batch_size])
            if cfg.noise_alpha > 0:
                x = inject_noise(x, cfg.noise_alpha, noise)
            opt.zero_grad()
            value = loss(model(x), y, cfg.loss)
            ad.backward(value)
            opt.step()
            losses.append(float(value.value))
        train_loss = float(np.mean(losses))
        val_loss = _split_loss(model, dataset.val, cfg.loss, cfg.noise_alpha, noise)
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if val_loss < result.best_val:
            result.best_val, result.best_epoch = val_loss, epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return result


def write_history(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
