"""Dual-path attention: intra-chunk self-attention and inter-chunk audio-visual fusion.

Shapes used throughout: chunked audio ``C_a`` is (S, K, D_a) and the aligned
visual stream ``E_v`` is (S, D_v), so the visual frame rate meets the audio
on the chunk axis S and never needs upsampling.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .attention import feed_forward, init_ffn, init_mha, multi_head_attention, scaled_dot_attention
from .config import ModelConfig
from .numerics import Tensor
from .params import ParameterStore

INTER_AUDIO_PROJ = ("q_aa", "k_a", "v_a", "q_av", "k_va", "v_va")
INTER_VISUAL_PROJ = ("q_vv", "k_v", "v_v", "q_va")


# -- initialization -------------------------------------------------------

def init_intra_layer(store: ParameterStore, prefix: str, cfg: ModelConfig) -> None:
    init_mha(store, f"{prefix}.mha", cfg.D_a, cfg.D_a, cfg.h, cfg.D_k)
    init_ffn(store, f"{prefix}.ffn", cfg.D_a, cfg.D_f)
    store.layer_norm(f"{prefix}.ln1", cfg.D_a)
    store.layer_norm(f"{prefix}.ln2", cfg.D_a)


def init_collapse(store: ParameterStore, prefix: str, cfg: ModelConfig) -> None:
    if cfg.collapse == "channel":
        store.add(f"{prefix}.weight", np.full(cfg.K, 1.0 / cfg.K))
        store.linear(f"{prefix}.proj", cfg.D_a, cfg.D_a)
    else:
        store.linear(f"{prefix}.proj", cfg.K * cfg.D_a, cfg.D_a)


def init_inter_layer(store: ParameterStore, prefix: str, cfg: ModelConfig) -> None:
    inner = cfg.h * cfg.D_k
    # key projections carry no bias (softmax cancels it)
    for name in INTER_VISUAL_PROJ:
        store.linear(f"{prefix}.{name}", cfg.D_v, inner, bias=not name.startswith("k_"))
    for name in INTER_AUDIO_PROJ:
        store.linear(f"{prefix}.{name}", cfg.D_a, inner, bias=not name.startswith("k_"))
    init_collapse(store, f"{prefix}.collapse", cfg)
    store.linear(f"{prefix}.out_a", inner, cfg.D_a)
    store.linear(f"{prefix}.out_v", inner, cfg.D_v)
    init_ffn(store, f"{prefix}.ffn_a", cfg.D_a, cfg.D_f)
    init_ffn(store, f"{prefix}.ffn_v", cfg.D_v, cfg.D_f)
    for name, dim in (("ln_a1", cfg.D_a), ("ln_v1", cfg.D_v), ("ln_a2", cfg.D_a), ("ln_v2", cfg.D_v)):
        store.layer_norm(f"{prefix}.{name}", dim)


def init_dual_path_module(store: ParameterStore, prefix: str, cfg: ModelConfig) -> None:
    for j in range(cfg.N_intra):
        init_intra_layer(store, f"{prefix}.intra.{j}", cfg)
    for j in range(cfg.N_inter):
        init_inter_layer(store, f"{prefix}.inter.{j}", cfg)


# -- forward --------------------------------------------------------------

def _ln(x: Tensor, w, name: str, eps: float) -> Tensor:
    return nx.layer_norm(x, w[f"{name}.gamma"], w[f"{name}.beta"], eps)


def _lt(x: Tensor, w, name: str) -> Tensor:
    return nx.linear(x, w[f"{name}.weight"], w.get(f"{name}.bias"))


def intra_chunk_layer(c_a: Tensor, w, cfg: ModelConfig) -> Tensor:
    """Post-norm transformer layer over the K axis of every chunk independently."""
    x = nx.add(c_a, multi_head_attention(c_a, c_a, w.view("mha"), cfg.h))
    x = _ln(x, w, "ln1", cfg.ln_eps)
    x = nx.add(x, feed_forward(x, w.view("ffn")))
    return _ln(x, w, "ln2", cfg.ln_eps)


def collapse_chunks(c_a: Tensor, w, cfg: ModelConfig | None = None) -> Tensor:
    """Reduce (S, K, D_a) to one vector per chunk, (S, D_a).

    ``channel`` mode: learned weighted sum over K followed by a D_a->D_a
    projection. ``full`` mode (no ``weight`` entry): one linear map from the
    flattened K*D_a chunk.
    """
    s, k, d = c_a.shape
    if "weight" in w:
        if w["weight"].shape != (k,):
            raise ValueError(f"collapse weights expect K={w['weight'].shape[0]}, got K={k}")
        mixed = nx.matmul(nx.transpose(c_a, (0, 2, 1)), nx.reshape(w["weight"], (k, 1)))
        pooled = nx.reshape(mixed, (s, d))
    else:
        if w["proj.weight"].shape[0] != k * d:
            raise ValueError(f"collapse projection expects K*D_a={w['proj.weight'].shape[0]}")
        pooled = nx.reshape(c_a, (s, k * d))
    return _lt(pooled, w, "proj")


def inter_chunk_layer(c_a: Tensor, e_v: Tensor, w, cfg: ModelConfig,
                      allow: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """One fusion layer over the chunk axis S; returns updated (C_a, E_v)."""
    s, k, _ = c_a.shape
    if e_v.shape[0] != s:
        raise ValueError(f"audio has S={s} chunks but visual stream has {e_v.shape[0]} rows")
    h = cfg.h

    # visual self-attention; key_v / value_v are shared with the audio->video cross path
    key_v = _lt(e_v, w, "k_v")
    value_v = _lt(e_v, w, "v_v")
    x_vv = scaled_dot_attention(_lt(e_v, w, "q_vv"), key_v, value_v, h, allow)

    # audio self-attention along S for every slice k, weights shared across k
    a = nx.transpose(c_a, (1, 0, 2))
    x_aa = scaled_dot_attention(_lt(a, w, "q_aa"), _lt(a, w, "k_a"), _lt(a, w, "v_a"), h, allow)
    x_aa = nx.transpose(x_aa, (1, 0, 2))

    # cross-attention through the K-collapsed audio summary
    c_va = collapse_chunks(c_a, w.view("collapse"), cfg)
    x_av = scaled_dot_attention(_lt(c_va, w, "q_av"), key_v, value_v, h, allow)
    x_va = scaled_dot_attention(_lt(e_v, w, "q_va"), _lt(c_va, w, "k_va"), _lt(c_va, w, "v_va"), h, allow)

    fused_a = nx.add(x_aa, nx.reshape(x_av, (s, 1, x_av.shape[-1])))
    c_a = _ln(nx.add(c_a, _lt(fused_a, w, "out_a")), w, "ln_a1", cfg.ln_eps)
    e_v = _ln(nx.add(e_v, _lt(nx.add(x_vv, x_va), w, "out_v")), w, "ln_v1", cfg.ln_eps)

    c_a = _ln(nx.add(c_a, feed_forward(c_a, w.view("ffn_a"))), w, "ln_a2", cfg.ln_eps)
    e_v = _ln(nx.add(e_v, feed_forward(e_v, w.view("ffn_v"))), w, "ln_v2", cfg.ln_eps)
    return c_a, e_v


def dual_path_module(c_a: Tensor, e_v: Tensor, w, cfg: ModelConfig,
                     allow: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    for j in range(cfg.N_intra):
        c_a = intra_chunk_layer(c_a, w.view(f"intra.{j}"), cfg)
    for j in range(cfg.N_inter):
        c_a, e_v = inter_chunk_layer(c_a, e_v, w.view(f"inter.{j}"), cfg, allow)
    return c_a, e_v


def cascade(c_a: Tensor, e_v: Tensor, w, cfg: ModelConfig,
            allow: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """N dual-path modules, each wrapped in a residual connection on both streams."""
    for i in range(cfg.N):
        new_a, new_v = dual_path_module(c_a, e_v, w.view(str(i)), cfg, allow)
        c_a, e_v = nx.add(new_a, c_a), nx.add(new_v, e_v)
    return c_a, e_v
