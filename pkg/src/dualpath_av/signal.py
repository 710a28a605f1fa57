"""Learnable analysis/synthesis filterbank, chunking and audio-video alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    window: int = 16
    stride: int = 8
    dim: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if min(self.window, self.stride, self.dim) <= 0:
            raise ValueError("window, stride and dim must be positive")


def num_frames(length: int, window: int = 16, stride: int = 8) -> int:
    """Encoder frames for a waveform of ``length`` samples (no padding)."""
    if length < window:
        raise ValueError(f"waveform of {length} samples is shorter than the window ({window})")
    return (length - window) // stride + 1


def decoded_length(n_frames: int, window: int = 16, stride: int = 8) -> int:
    return (n_frames - 1) * stride + window


def num_chunks(n_frames: int, chunk_size: int) -> int:
    _check_chunk_size(chunk_size)
    return -(-n_frames // (chunk_size // 2))


def _check_chunk_size(k: int) -> None:
    if k <= 0 or k % 2:
        raise ValueError(f"chunk size must be a positive even number, got {k}")


def encode(x, weight: Tensor, stride: int = 8) -> Tensor:
    """Strided 1-D convolution of a mono waveform: (T,) -> (T', D_a).

    ``weight`` has shape (window, D_a). No nonlinearity is applied.
    """
    x = nx.as_tensor(x, dtype=weight.dtype)
    if x.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {x.shape}")
    window = weight.shape[0]
    num_frames(x.shape[0], window, stride)
    return nx.matmul(nx.frames(x, window, stride), weight)


def decode(encoding: Tensor, weight: Tensor, stride: int = 8) -> Tensor:
    """Transposed convolution: (T', D_a) -> waveform of (T'-1)*stride + window samples.

    ``weight`` has shape (D_a, window).
    """
    if encoding.ndim != 2 or encoding.shape[1] != weight.shape[0]:
        raise ValueError(
            f"encoding shape {encoding.shape} does not match decoder weight {weight.shape}")
    return nx.overlap_add(nx.matmul(encoding, weight), stride)


def chunk(encoding: Tensor, chunk_size: int) -> Tensor:
    """Split (T', D) into S half-overlapping chunks of ``chunk_size`` rows: (S, K, D).

    The sequence is zero-padded at the end only, so chunk ``s`` starts at row
    ``s * K/2``.
    """
    _check_chunk_size(chunk_size)
    hop = chunk_size // 2
    n = encoding.shape[0]
    s = num_chunks(n, chunk_size)
    padded = nx.pad_end(encoding, (s - 1) * hop + chunk_size - n, axis=0)
    return nx.frames(padded, chunk_size, hop)


def coverage(n_chunks: int, chunk_size: int) -> np.ndarray:
    """How many chunks cover each padded row (1 at the ends, 2 inside)."""
    hop = chunk_size // 2
    cov = np.zeros((n_chunks - 1) * hop + chunk_size)
    for s in range(n_chunks):
        cov[s * hop: s * hop + chunk_size] += 1
    return cov


def overlap_add(chunks: Tensor, length: int) -> Tensor:
    """Inverse of :func:`chunk`: average overlapping rows and trim to ``length``."""
    s, k = chunks.shape[:2]
    _check_chunk_size(k)
    capacity = (s - 1) * (k // 2) + k
    if length > capacity:
        raise ValueError(f"requested length {length} exceeds padded capacity {capacity}")
    summed = nx.overlap_add(chunks, k // 2)
    inv = (1.0 / coverage(s, k)).astype(chunks.dtype)
    inv = inv.reshape((-1,) + (1,) * (chunks.ndim - 2))
    return nx.getitem(nx.mul(summed, inv), slice(0, length))


def align_visual(visual, n_chunks: int) -> np.ndarray:
    """Match T_v visual rows to S chunks by repeating the last row or truncating.

    Streams must describe the same duration: |T_v - S| <= max(2, 0.02 S).
    """
    v = np.asarray(visual.values if hasattr(visual, "values") else visual)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError(f"visual features must be a non-empty (T_v, D_v) matrix, got {v.shape}")
    t_v = v.shape[0]
    if abs(t_v - n_chunks) > max(2, 0.02 * n_chunks):
        raise ValueError(
            f"visual length T_v={t_v} is incompatible with S={n_chunks} audio chunks")
    if t_v == n_chunks:
        return v
    if t_v > n_chunks:
        return v[:n_chunks]
    return np.concatenate([v, np.repeat(v[-1:], n_chunks - t_v, axis=0)], axis=0)


def chunks_per_second(sample_rate: int = 16000, stride: int = 8, chunk_size: int = 160) -> float:
    return sample_rate / (stride * chunk_size / 2)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))

