"""Full extraction network and its checkpoint format."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from . import numerics as nx
from .attention import banded_mask
from .config import ModelConfig
from .fusion import cascade, init_dual_path_module
from .numerics import Tensor
from .params import ParameterStore
from .signal import align_visual, chunk, decode, encode, overlap_add, sinusoidal_encoding

MAGIC = b"AVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class DualPathAVModel:
    """Mask-based audio-visual target speech extractor.

    Pipeline: encode, chunk, align visual, dual-path cascade, overlap-add,
    sigmoid mask, Hadamard product with the encoding, decode.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng) -> ParameterStore:
        cfg = self.config
        store = ParameterStore(rng, self.dtype)
        store.uniform("encoder.weight", (cfg.W, cfg.D_a), cfg.W)
        for i in range(cfg.N):
            init_dual_path_module(store, f"dp.{i}", cfg)
        store.uniform("decoder.weight", (cfg.D_a, cfg.W), cfg.D_a)
        return store

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def attention_mask(self, n_chunks: int) -> np.ndarray | None:
        return banded_mask(n_chunks, self.config.attn_half_width)

    def forward(self, mixture, visual) -> tuple[Tensor, Tensor]:
        """Return ``(extracted waveform, mask)`` for a mono mixture and (T_v, D_v) visual features."""
        cfg = self.config
        visual = np.asarray(getattr(visual, "values", visual), dtype=self.dtype)
        if visual.ndim != 2 or visual.shape[1] != cfg.D_v:
            raise ValueError(f"visual features have D_v={visual.shape[-1]}, model expects D_v={cfg.D_v}")
        e_a = encode(mixture, self.params["encoder.weight"], cfg.stride)
        n_frames = e_a.shape[0]
        c_a = chunk(e_a, cfg.K)
        n_chunks = c_a.shape[0]
        e_v = align_visual(visual, n_chunks)
        if cfg.positional_encoding:
            c_a = nx.add(c_a, sinusoidal_encoding(n_chunks, cfg.D_a).astype(self.dtype)[:, None, :])
            e_v = e_v + sinusoidal_encoding(n_chunks, cfg.D_v).astype(self.dtype)
        c_a, _ = cascade(c_a, nx.as_tensor(e_v, self.dtype), self.params.view("dp"), cfg,
                         self.attention_mask(n_chunks))
        mask = nx.sigmoid(overlap_add(c_a, n_frames))
        extracted = decode(nx.mul(mask, e_a), self.params["decoder.weight"], cfg.stride)
        return extracted, mask

    __call__ = forward

    def extract(self, mixture, visual) -> np.ndarray:
        with nx.no_grad():
            out, _ = self.forward(mixture, visual)
        return out.data

    # -- checkpoints ------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(path, self.config, self.params)

    @classmethod
    def load(cls, path, expected_config: ModelConfig | None = None, dtype=np.float32) -> "DualPathAVModel":
        config, arrays = load_checkpoint(path)
        if expected_config is not None:
            diff = config.diff(expected_config)
            if diff:
                raise CheckpointError(f"checkpoint config mismatch in field(s): {', '.join(diff)}")
        model = cls(config, dtype=dtype)
        missing = [n for n in model.params if n not in arrays]
        extra = [n for n in arrays if n not in model.params]
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing={missing[:3]} unexpected={extra[:3]}")
        for name, p in model.params.items():
            if arrays[name].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
            p.data = arrays[name].astype(model.dtype)
        return model


def save_checkpoint(path, config: ModelConfig, params) -> None:
    buf = io.BytesIO()
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    for name, p in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"checkpoint truncated at byte {pos} (needed {n} more)")
        chunk_ = data[pos:pos + n]
        pos += n
        return chunk_

    if take(4) != MAGIC:
        raise CheckpointError("not an AVCK checkpoint (bad magic)")
    version, blob_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(take(blob_len)))
    except (json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"corrupt config block: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    while pos < len(data):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return config, arrays
