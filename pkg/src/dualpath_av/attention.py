"""Multi-head scaled dot-product attention and the position-wise feed-forward block."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .params import ParameterStore


def banded_mask(n: int, half_width: int) -> np.ndarray | None:
    """Boolean (n, n) allow-matrix with allow[i, j] iff |i - j| <= half_width.

    A negative ``half_width`` means unmasked and returns ``None``.
    """
    if half_width < 0:
        return None
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]) <= half_width


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    if d % heads:
        raise ValueError(f"feature dim {d} not divisible by {heads} heads")
    x = nx.reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return nx.transpose(x, tuple(axes))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dk = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return nx.reshape(nx.transpose(x, tuple(axes)), (*lead, n, h * dk))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         allow: np.ndarray | None = None, return_weights: bool = False):
    """Per head ``softmax(Q K^T / sqrt(D_k)) V``; heads are concatenated.

    ``q`` is (..., n_q, h*D_k); ``k`` and ``v`` are (..., n_k, h*D_k).
    ``allow`` is an (n_q, n_k) boolean matrix; disallowed pairs get weight 0.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"inconsistent attention shapes q{q.shape} k{k.shape} v{v.shape}")
    if allow is not None and allow.shape != (q.shape[-2], k.shape[-2]):
        raise ValueError(f"mask shape {allow.shape} does not match ({q.shape[-2]}, {k.shape[-2]})")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    d_k = qh.shape[-1]
    scores = nx.mul(nx.matmul(qh, nx.transpose(kh, _swap_last(kh.ndim))), 1.0 / np.sqrt(d_k))
    weights = nx.softmax(scores, axis=-1, allow=allow)
    out = _merge_heads(nx.matmul(weights, vh))
    return (out, weights) if return_weights else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def init_mha(store: ParameterStore, prefix: str, d_in: int, d_out: int, heads: int, d_k: int) -> None:
    inner = heads * d_k
    store.linear(f"{prefix}.q", d_in, inner)
    # no key bias: it shifts each score row by a constant that softmax cancels
    store.linear(f"{prefix}.k", d_in, inner, bias=False)
    store.linear(f"{prefix}.v", d_in, inner)
    store.linear(f"{prefix}.o", inner, d_out)


def multi_head_attention(x_q: Tensor, x_kv: Tensor, w, heads: int,
                         allow: np.ndarray | None = None) -> Tensor:
    """Project, attend, and apply the output projection. No residual or norm."""
    if x_q.shape[-1] != w["q.weight"].shape[0] or x_kv.shape[-1] != w["k.weight"].shape[0]:
        raise ValueError("input feature dim does not match attention weights")
    q = nx.linear(x_q, w["q.weight"], w["q.bias"])
    k = nx.linear(x_kv, w["k.weight"], w.get("k.bias"))
    v = nx.linear(x_kv, w["v.weight"], w["v.bias"])
    return nx.linear(scaled_dot_attention(q, k, v, heads, allow), w["o.weight"], w["o.bias"])


def init_ffn(store: ParameterStore, prefix: str, dim: int, hidden: int) -> None:
    store.linear(f"{prefix}.fc1", dim, hidden)
    store.linear(f"{prefix}.fc2", hidden, dim)


def feed_forward(x: Tensor, w) -> Tensor:
    """Linear -> ReLU -> Linear; shape preserved."""
    if x.shape[-1] != w["fc1.weight"].shape[0]:
        raise ValueError(f"feed-forward input dim {x.shape[-1]} != {w['fc1.weight'].shape[0]}")
    h = nx.relu(nx.linear(x, w["fc1.weight"], w["fc1.bias"]))
    return nx.linear(h, w["fc2.weight"], w["fc2.bias"])
