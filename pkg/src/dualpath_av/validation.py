"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_waveform(x, min_length: int = 1, name: str = "waveform") -> np.ndarray:
    """Return ``x`` as a finite 1-D float32 array of at least ``min_length`` samples."""
    arr = check_array(np.asarray(x), ensure_2d=False, dtype=np.float32, input_name=name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be mono (1-D), got shape {arr.shape}")
    if arr.shape[0] < min_length:
        raise ValueError(f"{name} has {arr.shape[0]} samples, need at least {min_length}")
    return arr


def check_visual(v, dim: int | None = None) -> np.ndarray:
    """Return visual features as a finite (T_v, D_v) float32 matrix."""
    v = getattr(v, "values", v)
    arr = check_array(np.asarray(v), dtype=np.float32, input_name="visual")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"visual features have D_v={arr.shape[1]}, expected D_v={dim}")
    return arr


def check_pairs(X, y=None, window: int = 16, dim: int | None = None):
    """Validate a sequence of ``(mixture, visual)`` pairs and optional targets."""
    if len(X) == 0:
        raise ValueError("X is empty")
    pairs = []
    for i, item in enumerate(X):
        if len(item) != 2:
            raise ValueError(f"X[{i}] must be a (mixture, visual) pair")
        pairs.append((check_waveform(item[0], window, f"X[{i}] mixture"), check_visual(item[1], dim)))
    if y is None:
        return pairs
    if len(y) != len(pairs):
        raise ValueError(f"{len(pairs)} inputs but {len(y)} targets")
    targets = []
    for i, (t, (mix, _)) in enumerate(zip(y, pairs)):
        t = check_waveform(t, window, f"y[{i}]")
        if t.shape != mix.shape:
            raise ValueError(f"y[{i}] length {t.shape[0]} != mixture length {mix.shape[0]}")
        targets.append(t)
    return pairs, targets
