"""Scale-invariant SNR, its improvement over the mixture, and a PIT wrapper."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

EPS = 1e-8
CLAMP_DB = 60.0


@dataclass(frozen=True)
class SisnrResult:
    value: float
    target_energy: float
    error_energy: float


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"si_snr needs equal-length 1-D signals, got {est.shape} and {ref.shape}")
    if est.size < 2:
        raise ValueError("si_snr needs at least 2 samples")
    return est - est.mean(), ref - ref.mean()


def si_snr_components(est, ref) -> SisnrResult:
    est, ref = _pair(est, ref)
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    est_energy = float(est @ est)
    if est_energy == 0.0:
        return SisnrResult(-CLAMP_DB, 0.0, 0.0)
    # the ratio uses a unit-energy copy so eps cannot break scale invariance
    unit = est / np.sqrt(est_energy)
    s_target = (unit @ ref) / ref_energy * ref
    e = unit - s_target
    t_energy, e_energy = float(s_target @ s_target), float(e @ e)
    if t_energy == 0.0:
        value = -CLAMP_DB
    else:
        value = float(np.clip(10 * np.log10(t_energy / (e_energy + EPS)), -CLAMP_DB, CLAMP_DB))
    return SisnrResult(value, t_energy * est_energy, e_energy * est_energy)


def si_snr(est, ref) -> float:
    """SI-SNR in dB, clamped to [-60, 60].

    The zero-mean estimate is scaled to unit energy before the ratio is
    formed, so the value is exactly invariant to the estimate's gain.
    """
    return si_snr_components(est, ref).value


def si_snr_improvement(est, mix, ref) -> float:
    return si_snr(est, ref) - si_snr(mix, ref)


def trim_to_shortest(*signals) -> list[np.ndarray]:
    n = min(len(s) for s in signals)
    return [np.asarray(s)[:n] for s in signals]


def si_snr_loss(est: Tensor, ref) -> Tensor:
    """Negative SI-SNR (no clamp) as a differentiable scalar.

    ``ref`` is treated as a constant; it is trimmed to the estimate length.
    """
    ref = np.asarray(ref, dtype=est.dtype)[: est.shape[0]]
    if ref.shape[0] != est.shape[0]:
        raise ValueError(f"reference shorter ({ref.shape[0]}) than estimate ({est.shape[0]})")
    ref = ref - ref.mean()
    ref_energy = float(np.dot(ref.astype(np.float64), ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    est = nx.sub(est, nx.mean(est))
    est = nx.div(est, nx.sqrt(nx.tsum(nx.mul(est, est))))
    scale = nx.mul(nx.tsum(nx.mul(est, ref)), 1.0 / ref_energy)
    s_target = nx.mul(scale, ref)
    err = nx.sub(est, s_target)
    ratio = nx.div(nx.tsum(nx.mul(s_target, s_target)), nx.add(nx.tsum(nx.mul(err, err)), EPS))
    return nx.mul(nx.log(ratio), -10.0 / np.log(10.0))


def pit_si_snr(ests, refs) -> tuple[float, tuple[int, ...]]:
    """Best mean SI-SNR over all assignments of estimates to references.

    Returns ``(mean_db, perm)`` where ``ests[perm[i]]`` is matched with
    ``refs[i]``. Ties resolve to the lexicographically first permutation.
    """
    n = len(refs)
    if len(ests) != n:
        raise ValueError(f"{len(ests)} estimates for {n} references")
    if not 1 <= n <= 5:
        raise ValueError("exhaustive PIT supports 1 to 5 sources")
    lengths = {len(x) for x in list(ests) + list(refs)}
    if len(lengths) != 1:
        raise ValueError("all signals must have the same length")
    pair = np.array([[si_snr(ests[j], refs[i]) for j in range(n)] for i in range(n)])
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        score = sum(pair[i, perm[i]] for i in range(n)) / n
        if score > best:
            best, best_perm = score, perm
    return float(best), best_perm
