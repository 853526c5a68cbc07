"""The MPR-Net forecaster.

Each layer holds three blocks:

* ``HPE`` extracts patterns from the history with dilated convolutions
  (channel-mixing and channel-independent) plus correlation attention;
* ``PEF`` slides the most recent pattern over past patterns, scores each
  delay by centred correlation and extends the continuation of every match
  out to the horizon;
* ``FSR`` reconstructs forecast patterns with transposed convolutions.

The forward pass ascends the HPE/PEF stack, then descends the FSR stack from
the top layer down, adding a time-axis linear residual at the bottom.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .nn import Conv1d, CorrelationAttention, Linear, Module, dropout, relu
from .tensor import DTYPE, ShapeMismatch

ABLATIONS = ("full", "no_multivariate", "fc_forecaster", "both")
NORM_EPS = 1e-8


class ConfigInvalid(ValueError):
    pass


class TooShort(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class EmptyCut(ValueError):
    pass


@dataclass
class ModelConfig:
    history_len: int
    horizon: int
    channels: int
    layers: int = 2
    kernel_size: int = 3
    dilations: Optional[list[int]] = None
    query_len: Optional[int] = None
    key_span: Optional[int] = None
    dropout: float = 0.1
    ablation: str = "full"
    softmax_weights: bool = False

    def __post_init__(self):
        L = self.history_len
        if self.dilations is None:
            self.dilations = [2 ** i for i in range(self.layers)]
        if self.query_len is None:
            self.query_len = max(1, min(L // 8, 16))
        if self.key_span is None:
            self.key_span = L
        self.validate()

    def validate(self) -> None:
        L, nq, m = self.history_len, self.query_len, self.key_span
        if self.horizon < 1 or self.channels < 1 or self.layers < 1:
            raise ConfigInvalid("horizon, channels and layers must be >= 1")
        if L < 2:
            raise ConfigInvalid("history_len must be >= 2")
        if nq < 1:
            raise ConfigInvalid("query_len must be >= 1")
        if m - nq < 1:
            raise ConfigInvalid(f"key_span - query_len must be >= 1 (got {m} - {nq})")
        if m > L:
            raise ConfigInvalid(f"key_span {m} exceeds history_len {L}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigInvalid("kernel_size must be odd and positive")
        if len(self.dilations) != self.layers or min(self.dilations) < 1:
            raise ConfigInvalid("need one positive dilation per layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigInvalid("dropout must be in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ConfigInvalid(f"ablation must be one of {ABLATIONS}")

    @property
    def num_delays(self) -> int:
        return self.key_span - self.query_len

    @property
    def multivariate(self) -> bool:
        return self.ablation in ("full", "fc_forecaster")

    @property
    def pattern_extension(self) -> bool:
        return self.ablation in ("full", "no_multivariate")

    def to_dict(self) -> dict:
        return asdict(self)


# -- normalization -----------------------------------------------------------

@dataclass
class NormalizationState:
    mean: np.ndarray
    std: np.ndarray


def normalize(series) -> tuple[np.ndarray, NormalizationState]:
    """Per-channel z-score over the time axis (population std, floored)."""
    x = np.asarray(series, dtype=DTYPE)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise TooShort(f"need at least 2 time steps, got shape {x.shape}")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.maximum(x.std(axis=-2, keepdims=True), NORM_EPS)
    return (x - mean) / std, NormalizationState(mean, std)


def denormalize(x, state: NormalizationState):
    if isinstance(x, Node):
        return x * state.std + state.mean
    return np.asarray(x) * state.std + state.mean


# -- pattern matching and extension --------------------------------------------

def extension_plan(history_len: int, query_len: int, delay: int, horizon: int):
    """Source rows and trend multipliers for extending the match at ``delay``.

    The cut is rows ``[delay + query_len, history_len)`` of length C; it is
    tiled ``a = horizon // C`` times (copy l offset by l*d) and the first
    ``b = horizon % C`` rows are appended with offset (a+1)*d.
    """
    start = delay + query_len
    cut = history_len - start
    if cut < 1:
        raise EmptyCut(f"delay {delay} leaves no rows to extend")
    t = np.arange(horizon)
    return start + t % cut, (t // cut + 1).astype(DTYPE)


def pattern_extend(V, delay: int, trend: float, horizon: int, query_len: int) -> np.ndarray:
    V = np.asarray(V, dtype=DTYPE)
    rows, mult = extension_plan(V.shape[-2], query_len, delay, horizon)
    return V[..., rows, :] + mult[:, None] * trend


class Matcher:
    """Precomputed index plans for sliding ``query_len`` over ``key_span``."""

    def __init__(self, history_len, horizon, query_len, key_span):
        self.history_len, self.horizon = history_len, horizon
        self.query_len, self.key_span = query_len, key_span
        self.delays = np.arange(key_span - query_len)
        self.window_rows = self.delays[:, None] + np.arange(query_len)[None, :]
        plans = [extension_plan(history_len, query_len, int(j), horizon) for j in self.delays]
        self.ext_rows = np.stack([p[0] for p in plans])
        self.ext_mult = np.stack([p[1] for p in plans])


def pma_match(P_in, q_map: Linear, k_map: Linear, v_map: Linear, matcher: Matcher):
    """Centred correlation of the current pattern against every past window.

    Returns ``(R, q_mean, window_means, V)`` with ``R`` and ``window_means`` of
    shape ``(..., J)`` for ``J = key_span - query_len`` delays.
    """
    P_in = ad.as_node(P_in)
    L, nq, m = matcher.history_len, matcher.query_len, matcher.key_span
    lead = P_in.shape[:-2]
    D = P_in.shape[-1]
    Q = q_map(P_in[..., L - nq:, :])
    K = k_map(P_in[..., :m, :])
    V = v_map(P_in)
    windows = ad.gather(K, matcher.window_rows, axis=-2)  # (..., J, nq, D)
    q_mean = ad.mean(Q, axis=(-2, -1), keepdims=True)
    w_mean = ad.mean(windows, axis=(-2, -1), keepdims=True)
    qc = ad.reshape(Q - q_mean, lead + (1, nq, D))
    R = ad.sum_(qc * (windows - w_mean), axis=(-2, -1))
    return R, ad.reshape(q_mean, lead + (1,)), ad.reshape(w_mean, lead + (len(matcher.delays),)), V


def extension_mix(weights, V, rows: np.ndarray) -> Node:
    """``sum_j weights[..., j] * V[..., rows[j], :]`` for index plans ``rows`` of shape (J, T).

    The weights are scattered into a (T, L) mixing matrix, so the (J, T, D)
    stack of extended cuts is never materialised.
    """
    weights, V = ad.as_node(weights), ad.as_node(V)
    J, T = rows.shape
    L = V.shape[-2]
    lead = weights.shape[:-1]
    if V.shape[:-2] != lead or weights.shape[-1] != J:
        raise ShapeMismatch(f"weights {weights.shape} do not match values {V.shape} and plan {rows.shape}")
    flat = (np.arange(T)[None, :] * L + rows).ravel()  # delay-major (j, t) -> t*L + row
    w2 = weights.value.reshape(-1, J)
    B = w2.shape[0]
    slots = (np.arange(B)[:, None] * (T * L) + flat[None, :]).ravel()
    A = np.bincount(slots, weights=np.repeat(w2, T, axis=1).ravel(), minlength=B * T * L)
    A = A.reshape(lead + (T, L))
    Vv = V.value
    out = A @ Vv

    def vjp(g):
        gA = (g @ np.swapaxes(Vv, -1, -2)).reshape(B, T * L)
        gw = gA[:, flat].reshape(B, J, T).sum(axis=-1).reshape(lead + (J,))
        return gw, np.swapaxes(A, -1, -2) @ g

    return ad.record("extension_mix", out, (weights, V), vjp)


class PEF(Module):
    def __init__(self, cfg: ModelConfig, rng):
        D = cfg.channels
        self.q_map = Linear(D, D, rng)
        self.k_map = Linear(D, D, rng)
        self.v_map = Linear(D, D, rng)
        self.matcher = Matcher(cfg.history_len, cfg.horizon, cfg.query_len, cfg.key_span)
        self.scale = cfg.history_len * math.sqrt(D)
        self.softmax_weights = cfg.softmax_weights
        self.last_scores: np.ndarray | None = None

    def __call__(self, P_in) -> Node:
        R, q_mean, w_mean, V = pma_match(P_in, self.q_map, self.k_map, self.v_map, self.matcher)
        self.last_scores = R.value
        trend = q_mean - w_mean  # (..., J)
        lead = R.shape
        ramp = ad.reshape(trend, lead + (1,)) * self.matcher.ext_mult  # (..., J, T)
        if self.softmax_weights:
            weights = ad.softmax(R * (1.0 / self.scale), axis=-1)
        else:
            weights = R * (1.0 / self.scale)
        out = extension_mix(weights, V, self.matcher.ext_rows)
        w = ad.reshape(weights, lead + (1,))
        return out + ad.reshape(ad.sum_(w * ramp, axis=-2), R.shape[:-1] + (self.matcher.horizon, 1))


class TimeLinear(Module):
    """Dense map over the time axis, shared across channels: ``(.., L, D) -> (.., T, D)``."""

    def __init__(self, in_len, out_len, rng):
        self.proj = Linear(in_len, out_len, rng)

    def __call__(self, x) -> Node:
        return ad.swapaxes(self.proj(ad.swapaxes(x, -1, -2)), -1, -2)


# -- blocks ------------------------------------------------------------------

class _ConvBlock(Module):
    """Shared body of HPE and FSR: two conv paths plus correlation attention."""

    def __init__(self, cfg: ModelConfig, dilation: int, length: int, transposed: bool, rng):
        D, k = cfg.channels, cfg.kernel_size
        self.p = cfg.dropout
        self.multivariate = cfg.multivariate
        if self.multivariate:
            self.fusion1 = Conv1d(D, D, k, dilation, 1, transposed, rng)
            self.fusion2 = Conv1d(D, D, k, dilation, 1, transposed, rng)
        self.interact1 = Conv1d(D, D, k, dilation, D, transposed, rng)
        self.interact2 = Conv1d(D, D, k, dilation, D, transposed, rng)
        if self.multivariate:
            self.attention = CorrelationAttention(D, D * math.sqrt(length), rng)
        self.dropout_rng = np.random.default_rng(0)

    def _drop(self, x):
        return dropout(x, self.p, self.training, self.dropout_rng)

    def features(self, x) -> Node:
        """The block output without the residual input."""
        g = self._drop(relu(self.interact1(x)))
        g = self._drop(relu(self.interact2(g)))
        if not self.multivariate:
            return g
        f = self._drop(relu(self.fusion1(x)))
        f = self._drop(relu(self.fusion2(f)))
        return f + self.attention(g)


class HPE(_ConvBlock):
    def __init__(self, cfg, dilation, rng):
        super().__init__(cfg, dilation, cfg.history_len, False, rng)

    def __call__(self, x) -> tuple[Node, Node]:
        p_in = self.features(x)
        return p_in + x, p_in


class FSR(_ConvBlock):
    def __init__(self, cfg, dilation, rng):
        super().__init__(cfg, dilation, cfg.horizon, True, rng)

    def __call__(self, z) -> Node:
        return self.features(z) + z


class Layer(Module):
    def __init__(self, cfg: ModelConfig, index: int, rng):
        dil = cfg.dilations[index]
        self.hpe = HPE(cfg, dil, rng)
        if cfg.pattern_extension:
            self.pef = PEF(cfg, rng)
        else:
            self.pef = TimeLinear(cfg.history_len, cfg.horizon, rng)
        self.fsr = FSR(cfg, dil, rng)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per purpose, all derived from one seed."""
    names = ("init", "dropout", "shuffle", "noise")
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        for i, name in enumerate(names)
    }


class MPRNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        streams = rng_streams(seed)
        init = streams["init"]
        self.layers = [Layer(cfg, i, init) for i in range(cfg.layers)]
        self.final_linear = TimeLinear(cfg.history_len, cfg.horizon, init)
        self.set_dropout_rng(streams["dropout"])
        for name, p in self.named_parameters():
            p.name = name

    def set_dropout_rng(self, rng: np.random.Generator) -> None:
        for m in self.modules():
            if isinstance(m, _ConvBlock):
                m.dropout_rng = rng

    def __call__(self, history, return_trace: bool = False):
        return self.forward(history, return_trace)

    def forward(self, history, return_trace: bool = False):
        """Forecast ``(..., T, D)`` from ``(..., L, D)`` raw history."""
        cfg = self.cfg
        x = np.asarray(history.value if isinstance(history, Node) else history, dtype=DTYPE)
        if x.shape[-2:] != (cfg.history_len, cfg.channels):
            raise ShapeMismatch(
                f"history shape {x.shape} does not end with ({cfg.history_len}, {cfg.channels})"
            )
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("history contains NaN or Inf")
        x_norm, state = normalize(x)
        X = Node(x_norm)
        p_outs, scores = [], []
        for layer in self.layers:
            X, p_in = layer.hpe(X)
            p_outs.append(layer.pef(p_in))
            if return_trace and isinstance(layer.pef, PEF):
                scores.append(layer.pef.last_scores)
        Y = None
        for layer, p_out in zip(reversed(self.layers), reversed(p_outs)):
            z = p_out if Y is None else p_out + Y
            Y = layer.fsr(z)
        Y = Y + self.final_linear(X)
        out = denormalize(Y, state)
        if return_trace:
            return out, {"scores": scores, "norm": state}
        return out

    def predict(self, history) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with ad.no_grad():
                return self.forward(history).value
        finally:
            self.train(was_training)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ShapeMismatch(f"checkpoint keys differ: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
        for name, p in own.items():
            p.value = np.array(state[name], dtype=DTYPE)

    def save(self, path) -> None:
        ad.save_params(path, self.parameters())

    def load(self, path) -> None:
        self.load_state_dict(ad.load_params(path))


def runtime_scaling_probe(make_config, history_lens, batch: int = 8, repeats: int = 5, seed: int = 0):
    """Median eval-mode forward time per history length.

    ``make_config(L)`` returns the :class:`ModelConfig` to time at length L.
    Returns a list of ``(L, seconds)`` rows.
    """
    rows = []
    rng = np.random.default_rng(seed)
    for L in history_lens:
        cfg = make_config(L)
        model = MPRNet(cfg, seed=seed).eval()
        x = rng.standard_normal((batch, L, cfg.channels))
        times = []
        with ad.no_grad():
            model.forward(x)  # warm-up
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.forward(x)
                times.append(time.perf_counter() - t0)
        rows.append((L, statistics.median(times)))
    return rows
