from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults give the full-size model."""

    N: int = 3
    N_intra: int = 4
    N_inter: int = 4
    K: int = 160
    D_a: int = 256
    D_v: int = 512
    h: int = 8
    D_k: int = 64
    D_f: int = 1024
    W: int = 16
    stride: int = 8
    sample_rate: int = 16000
    fps: int = 25
    attn_half_width: int = 62
    positional_encoding: bool = False
    collapse: str = "channel"
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("K", "D_a", "D_v", "h", "D_k", "D_f", "W", "stride", "sample_rate", "fps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        for name in ("N_intra", "N_inter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.K % 2:
            raise ValueError("K must be even")
        if self.collapse not in ("channel", "full"):
            raise ValueError("collapse must be 'channel' or 'full'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def diff(self, other: "ModelConfig") -> list[str]:
        """Names of fields whose values differ."""
        a, b = self.to_dict(), other.to_dict()
        return [k for k in a if a[k] != b[k]]
