"""Differentiable layers: dilated/grouped 1-D convolutions and their adjoints,
channel-wise linear maps, relu/dropout and correlation attention.

Series inputs are ``(..., time, channel)``.  All convolutions use stride 1
and symmetric zero padding, so the time extent is preserved.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .tensor import DTYPE, ShapeMismatch


class EvenKernel(ValueError):
    pass


class InvalidProbability(ValueError):
    pass


class Module:
    """Minimal parameter container; children are discovered from attributes."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, val in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- convolution kernels (plain numpy, batch axis leading) ------------------

def _as_batched(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    lead = x.shape[:-2]
    return x.reshape((-1,) + x.shape[-2:]), lead


def conv_apply(x: np.ndarray, w: np.ndarray, dilation: int, groups: int) -> np.ndarray:
    """out[t, o] = sum_{k, c in group(o)} w[o, c, k] * x[t + k*dilation - pad, c]."""
    xb, lead = _as_batched(x)
    B, L, cin = xb.shape
    cout, cin_g, K = w.shape
    pad = (K - 1) * dilation // 2
    xp = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros((B, L, cout), dtype=DTYPE)
    for k in range(K):
        xs = xp[:, k * dilation:k * dilation + L, :]
        if groups == 1:
            out += xs @ w[:, :, k].T
        elif cin_g == 1 and cout == cin:
            out += xs * w[:, 0, k]
        else:
            cout_g = cout // groups
            wg = w[:, :, k].reshape(groups, cout_g, cin_g)
            out += np.einsum("blgc,goc->blgo", xs.reshape(B, L, groups, cin_g), wg).reshape(B, L, cout)
    return out.reshape(lead + (L, cout))


def conv_adjoint(y: np.ndarray, w: np.ndarray, dilation: int, groups: int) -> np.ndarray:
    """Adjoint of :func:`conv_apply` in its input: maps ``(L, cout)`` to ``(L, cin)``."""
    yb, lead = _as_batched(y)
    B, L, cout = yb.shape
    _, cin_g, K = w.shape
    cin = cin_g * groups
    pad = (K - 1) * dilation // 2
    gp = np.zeros((B, L + 2 * pad, cin), dtype=DTYPE)
    for k in range(K):
        if groups == 1:
            contrib = yb @ w[:, :, k]
        elif cin_g == 1 and cout == cin:
            contrib = yb * w[:, 0, k]
        else:
            cout_g = cout // groups
            wg = w[:, :, k].reshape(groups, cout_g, cin_g)
            contrib = np.einsum("blgo,goc->blgc", yb.reshape(B, L, groups, cout_g), wg).reshape(B, L, cin)
        gp[:, k * dilation:k * dilation + L, :] += contrib
    return gp[:, pad:pad + L, :].reshape(lead + (L, cin))


def conv_weight_grad(x: np.ndarray, gy: np.ndarray, w_shape, dilation: int, groups: int) -> np.ndarray:
    """d/dw of sum(gy * conv_apply(x, w))."""
    xb, _ = _as_batched(x)
    gb, _ = _as_batched(gy)
    B, L, cin = xb.shape
    cout, cin_g, K = w_shape
    pad = (K - 1) * dilation // 2
    xp = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    gw = np.zeros(w_shape, dtype=DTYPE)
    gflat = gb.reshape(-1, cout)
    for k in range(K):
        xs = xp[:, k * dilation:k * dilation + L, :]
        if groups == 1:
            gw[:, :, k] = gflat.T @ xs.reshape(-1, cin)
        elif cin_g == 1 and cout == cin:
            gw[:, 0, k] = np.einsum("blc,blc->c", gb, xs)
        else:
            cout_g = cout // groups
            gw[:, :, k] = np.einsum(
                "blgo,blgc->goc", gb.reshape(B, L, groups, cout_g), xs.reshape(B, L, groups, cin_g)
            ).reshape(cout, cin_g)
    return gw


def _check_conv(x: Node, w: Node, dilation: int, groups: int, in_channels: int) -> None:
    K = w.shape[2]
    if K % 2 == 0:
        raise EvenKernel(f"kernel size must be odd, got {K}")
    if dilation < 1 or groups < 1:
        raise ValueError("dilation and groups must be positive")
    if x.ndim < 2 or x.shape[-1] != in_channels:
        raise ShapeMismatch(f"expected {in_channels} input channels, got shape {x.shape}")


def conv1d(x, weight, bias=None, dilation: int = 1, groups: int = 1) -> Node:
    """Length-preserving dilated convolution; ``weight`` is ``(cout, cin/groups, K)``."""
    x, w = ad.as_node(x), ad.as_node(weight)
    _check_conv(x, w, dilation, groups, w.shape[1] * groups)
    xv, wv = x.value, w.value
    out = conv_apply(xv, wv, dilation, groups)
    parents = [x, w]
    if bias is not None:
        b = ad.as_node(bias)
        out = out + b.value
        parents.append(b)

    def vjp(g):
        grads = [conv_adjoint(g, wv, dilation, groups), conv_weight_grad(xv, g, wv.shape, dilation, groups)]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return ad.record("conv1d", out, parents, vjp)


def conv1d_transposed(x, weight, bias=None, dilation: int = 1, groups: int = 1) -> Node:
    """Adjoint of :func:`conv1d` with the same weight; ``weight`` is ``(cin, cout/groups, K)``."""
    x, w = ad.as_node(x), ad.as_node(weight)
    _check_conv(x, w, dilation, groups, w.shape[0])
    xv, wv = x.value, w.value
    out = conv_adjoint(xv, wv, dilation, groups)
    parents = [x, w]
    if bias is not None:
        b = ad.as_node(bias)
        out = out + b.value
        parents.append(b)

    def vjp(g):
        grads = [conv_apply(g, wv, dilation, groups), conv_weight_grad(g, xv, wv.shape, dilation, groups)]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return ad.record("conv1d_transposed", out, parents, vjp)


class Conv1d(Module):
    """Dilated conv; ``groups=1`` mixes channels, ``groups=in_channels`` keeps them independent."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1, groups=1,
                 transposed=False, rng=None):
        if kernel_size % 2 == 0:
            raise EvenKernel(f"kernel size must be odd, got {kernel_size}")
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"groups={groups} must divide {in_channels} and {out_channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.dilation, self.groups = kernel_size, dilation, groups
        self.transposed = transposed
        if transposed:
            shape = (in_channels, out_channels // groups, kernel_size)
            fan_in = (in_channels // groups) * kernel_size
        else:
            shape = (out_channels, in_channels // groups, kernel_size)
            fan_in = shape[1] * kernel_size
        self.weight = Parameter(_uniform(rng, shape, fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) * self.dilation // 2

    def __call__(self, x) -> Node:
        fn = conv1d_transposed if self.transposed else conv1d
        return fn(x, self.weight, self.bias, self.dilation, self.groups)


class Linear(Module):
    """``y = x @ W + b`` along the last axis; ``W`` is ``(in_features, out_features)``."""

    def __init__(self, in_features, out_features, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(_uniform(rng, (in_features, out_features), in_features))
        self.bias = Parameter(_uniform(rng, (out_features,), in_features))

    def __call__(self, x) -> Node:
        x = ad.as_node(x)
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"expected last extent {self.in_features}, got {x.shape}")
        return ad.matmul(x, self.weight) + self.bias


def relu(x) -> Node:
    return ad.relu(x)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Node:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout probability must be in [0, 1), got {p}")
    x = ad.as_node(x)
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return ad.mul(x, keep / (1.0 - p))


def _centered_time_major(features: Node, fmap: Linear) -> Node:
    # (..., len, D) -> (..., D, len) with each row mean-centred along len
    z = ad.swapaxes(fmap(features), -1, -2)
    return z - ad.mean(z, axis=-1, keepdims=True)


def correlation_weights(features, q_map: Linear, k_map: Linear, scale: float) -> Node:
    """Centred ``Q Kᵀ / scale`` between channels, shape ``(..., D, D)``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    features = ad.as_node(features)
    q = _centered_time_major(features, q_map)
    k = _centered_time_major(features, k_map)
    return ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / scale)


def correlation_attention(features, q_map: Linear, k_map: Linear, v_map: Linear, scale: float) -> Node:
    features = ad.as_node(features)
    weights = correlation_weights(features, q_map, k_map, scale)
    v = ad.swapaxes(v_map(features), -1, -2)
    return ad.swapaxes(ad.matmul(weights, v), -1, -2)


class CorrelationAttention(Module):
    def __init__(self, channels: int, scale: float, rng=None):
        self.scale = scale
        self.q_map = Linear(channels, channels, rng)
        self.k_map = Linear(channels, channels, rng)
        self.v_map = Linear(channels, channels, rng)

    def __call__(self, x) -> Node:
        return correlation_attention(x, self.q_map, self.k_map, self.v_map, self.scale)
