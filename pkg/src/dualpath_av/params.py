"""Named parameter container and initializers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .numerics import Tensor, parameter


class ParameterStore(OrderedDict):
    """Ordered mapping ``name -> Tensor`` with registration helpers.

    Insertion order is the canonical order used for checkpoints and
    optimizer state.
    """

    def __init__(self, rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = parameter(np.asarray(value, dtype=self.dtype), name=name)
        self[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int) -> Tensor:
        limit = 1.0 / np.sqrt(fan_in)
        return self.add(name, self.rng.uniform(-limit, limit, size=shape))

    def linear(self, prefix: str, d_in: int, d_out: int, bias: bool = True) -> None:
        self.uniform(f"{prefix}.weight", (d_in, d_out), d_in)
        if bias:
            self.uniform(f"{prefix}.bias", (d_out,), d_in)

    def layer_norm(self, prefix: str, dim: int) -> None:
        self.add(f"{prefix}.gamma", np.ones(dim))
        self.add(f"{prefix}.beta", np.zeros(dim))

    def view(self, prefix: str) -> "ParamView":
        return ParamView(self, prefix)


class ParamView:
    """Prefix-scoped read access into a :class:`ParameterStore`."""

    def __init__(self, store, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, key: str) -> Tensor:
        return self.store[f"{self.prefix}.{key}"]

    def get(self, key: str, default=None):
        return self.store.get(f"{self.prefix}.{key}", default)

    def view(self, prefix: str) -> "ParamView":
        return ParamView(self.store, f"{self.prefix}.{prefix}")

    def __contains__(self, key: str) -> bool:
        return f"{self.prefix}.{key}" in self.store
