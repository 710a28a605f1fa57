"""Quick end-to-end invariant checks used by ``dualpath-av selftest``."""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .attention import banded_mask, scaled_dot_attention
from .config import ModelConfig
from .datasets import solve_interference_gain
from .metrics import si_snr, si_snr_loss
from .model import DualPathAVModel
from .signal import align_visual, chunk, num_chunks, num_frames, overlap_add

FAULTABLE = ("layer_norm", "softmax")

TINY_CONFIG = ModelConfig(N=1, N_intra=1, N_inter=1, K=4, D_a=8, D_v=6, h=2, D_k=4, D_f=16,
                          attn_half_width=-1)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def tiny_gradcheck(seed: int = 0, tol: float = 1e-4, step: float = 1e-6,
                   config: ModelConfig = TINY_CONFIG) -> nx.GradCheckReport:
    """Gradient check of the -SI-SNR loss through a tiny full model (S=3 chunks)."""
    model = DualPathAVModel(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    n_frames = 6
    length = (n_frames - 1) * config.stride + config.W
    mixture = rng.standard_normal(length)
    reference = rng.standard_normal(length)
    visual = rng.standard_normal((num_chunks(n_frames, config.K), config.D_v))

    def loss():
        est, _ = model.forward(mixture, visual)
        return si_snr_loss(est, reference)

    return nx.grad_check(loss, model.params, step=step, tol=tol)


def _check_roundtrip() -> str:
    rng = np.random.default_rng(0)
    for n in (80, 81, 160, 1000, 15999):
        x = rng.standard_normal((n, 4)).astype(np.float32)
        y = overlap_add(chunk(nx.Tensor(x), 160), n).data
        err = float(np.max(np.abs(y - x)))
        if err > 1e-6:
            raise AssertionError(f"T'={n}: max error {err:.3g}")
    return "overlap_add(chunk(x)) == x for T' in {80, 81, 160, 1000, 15999}"


def _check_attention() -> str:
    rng = np.random.default_rng(1)
    q, k, v = (nx.Tensor(rng.standard_normal((7, 8))) for _ in range(3))
    allow = banded_mask(7, 2)
    _, w = scaled_dot_attention(q, k, v, heads=2, allow=allow, return_weights=True)
    rows = w.data.sum(axis=-1)
    if np.max(np.abs(rows - 1)) > 1e-6:
        raise AssertionError("attention weights do not sum to 1")
    if np.any(w.data[:, ~allow] != 0):
        raise AssertionError("masked attention weights are not exactly zero")
    return "rows sum to 1, masked entries exactly 0"


def _check_alignment() -> str:
    for seconds in range(1, 11):
        n = seconds * 16000
        s = num_chunks(num_frames(n), 160)
        t_v = seconds * 25
        if abs(s - t_v) > 1:
            raise AssertionError(f"{seconds}s: S={s}, T_v={t_v}")
        align_visual(np.zeros((t_v, 2)), s)
    return "|S - T_v| <= 1 for 1..10 s at 16 kHz / 25 fps"


def _check_gain_solver() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        s, n = rng.standard_normal(400), rng.standard_normal(400)
        db = rng.uniform(-12, 10)
        g = solve_interference_gain(s, n, db)
        worst = max(worst, abs(si_snr(s + g * n, s) - db))
    if worst > 1e-4:
        raise AssertionError(f"measured SI-SNR off by {worst:.3g} dB")
    return f"worst measure-back error {worst:.2e} dB"


def _check_gradients() -> str:
    report = tiny_gradcheck()
    name, err = report.worst
    if not report.passed:
        raise AssertionError(f"{name}: relative error {err:.3g} >= {report.tol}")
    return f"{len(report.errors)} parameters, worst relative error {err:.2e}"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("overlap_add_roundtrip", _check_roundtrip),
    ("attention_normalization", _check_attention),
    ("av_alignment", _check_alignment),
    ("gain_solver", _check_gain_solver),
    ("gradcheck", _check_gradients),
]


def run_selftest(sabotage: str | None = None) -> list[CheckResult]:
    if sabotage is not None and sabotage not in FAULTABLE:
        raise ValueError(f"unknown sabotage target {sabotage!r}; choose from {FAULTABLE}")
    ctx = nx.inject_fault(sabotage) if sabotage else contextlib.nullcontext()
    results = []
    with ctx:
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                results.append(CheckResult(name, True, fn(), time.perf_counter() - t0))
            except Exception as exc:  # report every failing suite, not just the first
                results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}",
                                           time.perf_counter() - t0))
    return results
