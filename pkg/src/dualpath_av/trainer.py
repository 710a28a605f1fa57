"""Adam, the plateau learning-rate schedule, and the batch-size-1 training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .datasets import Example, load_example, read_manifest
from .metrics import si_snr_improvement, si_snr_loss, trim_to_shortest
from .model import DualPathAVModel

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: OptimState) -> None:
    """Bias-corrected Adam update of every parameter from its ``.grad``.

    All gradients are validated before any parameter moves, so a non-finite
    gradient leaves the model untouched.
    """
    for name, p in params.items():
        if p.grad is None or p.grad.shape != p.shape:
            raise ValueError(f"missing or misshapen gradient for {name}")
        if not np.isfinite(p.grad).all():
            raise nx.NonFiniteError(f"gradient of {name}", "adam_step")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.dot(p.grad.ravel().astype(np.float64), p.grad.ravel()))
                              for p in params.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            p.grad = (p.grad * scale).astype(p.dtype)
    return total


@dataclass
class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without a new best."""

    patience: int = 3
    factor: float = 2.0
    min_delta: float = 0.01
    best: float = -np.inf
    epochs_since_improve: int = 0

    def update(self, state: OptimState, val_metric: float) -> bool:
        if val_metric > self.best + self.min_delta:
            self.best = val_metric
            self.epochs_since_improve = 0
            return False
        self.epochs_since_improve += 1
        if self.epochs_since_improve >= self.patience:
            state.lr /= self.factor
            self.epochs_since_improve = 0
            return True
        return False


def plateau_update(sched: PlateauSchedule, state: OptimState, val_sisnr: float) -> float:
    sched.update(state, val_sisnr)
    return state.lr


@dataclass
class TrainResult:
    model: DualPathAVModel
    losses: list[float]
    log: list[dict]
    best_val: float


def evaluate(model: DualPathAVModel, items: Sequence[Example]) -> float:
    """Mean SI-SNR improvement (dB) of the model's extractions over the items."""
    scores = []
    for ex in items:
        est = model.extract(ex.mixture, ex.visual)
        est, mix, ref = trim_to_shortest(est, ex.mixture, ex.reference)
        scores.append(si_snr_improvement(est, mix, ref))
    return float(np.mean(scores))


def train_step(model: DualPathAVModel, ex: Example, state: OptimState, clip_norm: float) -> float:
    est, _ = model.forward(ex.mixture, ex.visual)
    loss = si_snr_loss(est, ex.reference)
    nx.backward(loss, model.parameters())
    if clip_norm:
        clip_grad_norm(model.params, clip_norm)
    adam_step(model.params, state)
    return loss.item()


def train(
    model: DualPathAVModel,
    train_items: Sequence[Example],
    val_items: Sequence[Example] | None = None,
    epochs: int = 1,
    seed: int = 0,
    lr: float = 1e-4,
    clip_norm: float = 5.0,
    max_steps: int | None = None,
    out_dir=None,
    log_fn: Callable[[dict], None] | None = None,
    shuffle: bool = True,
    val_every: int = 1,
    target_val: float | None = None,
) -> TrainResult:
    """Train with batch size 1 and the -SI-SNR objective.

    Validation SI-SNRi runs every ``val_every`` epochs and drives the plateau
    schedule. Checkpoints go to ``<out_dir>/epoch_<n>.avck`` and
    ``<out_dir>/best.avck``. Training stops early at ``max_steps`` or once the
    validation score reaches ``target_val``.
    """
    if not train_items:
        raise ValueError("no training items")
    val_items = val_items if val_items is not None else train_items
    state = OptimState(lr=lr)
    sched = PlateauSchedule()
    rng = np.random.default_rng(seed)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    losses: list[float] = []
    log: list[dict] = []

    def emit(record: dict) -> None:
        log.append(record)
        if log_fn:
            log_fn(record)

    best_val = -np.inf
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_items)) if shuffle else np.arange(len(train_items))
        for i in order:
            loss = train_step(model, train_items[i], state, clip_norm)
            if not np.isfinite(loss):
                raise nx.NonFiniteError("loss")
            losses.append(loss)
            emit({"epoch": epoch, "step": state.step, "loss": loss, "lr": state.lr})
            if max_steps is not None and state.step >= max_steps:
                break
        done = max_steps is not None and state.step >= max_steps
        if epoch % val_every == 0 or done or epoch == epochs:
            val = evaluate(model, val_items)
            sched.update(state, val)
            emit({"epoch": epoch, "step": state.step, "val_sisnri": val, "lr": state.lr})
            logger.info("epoch %d step %d val %.3f dB lr %.3g", epoch, state.step, val, state.lr)
            if out:
                model.save(out / f"epoch_{epoch}.avck")
                if val > best_val:
                    model.save(out / "best.avck")
            best_val = max(best_val, val)
            if target_val is not None and val >= target_val:
                break
        if done:
            break
    return TrainResult(model, losses, log, float(best_val))


def train_from_manifest(config: ModelConfig, manifest, epochs: int, seed: int = 0,
                        out_dir=None, val_manifest=None, log_path=None, **kwargs) -> TrainResult:
    """Build a model from ``config`` and train it on a JSON-lines manifest."""
    def materialize(path):
        return [load_example(e, config.fps, config.D_v, config.sample_rate) for e in read_manifest(path)]

    train_items = materialize(manifest)
    val_items = materialize(val_manifest) if val_manifest else train_items
    model = DualPathAVModel(config, seed=seed)
    fh = open(log_path, "w") if log_path else None
    try:
        def log_fn(rec):
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
        return train(model, train_items, val_items, epochs=epochs, seed=seed,
                     out_dir=out_dir, log_fn=log_fn, **kwargs)
    finally:
        if fh:
            fh.close()
