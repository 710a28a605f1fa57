"""Small reverse-mode automatic differentiation engine on top of numpy.

Every primitive returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order.  Graphs are built per call, so independent graphs can live on
different threads; the ``no_grad`` switch is thread-local.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()

# Primitive names whose backward pass is deliberately corrupted (selftest
# negative control only).
_FAULTS: set[str] = set()


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        self.op = op
        self.where = where
        super().__init__(f"non-finite values produced by '{op}' ({where})")


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def inject_fault(name: str):
    """Scale the backward pass of primitive ``name`` by 1.01 inside the block."""
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


class Tensor:
    """Dense array plus the bookkeeping needed for reverse-mode gradients."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- array-ish surface ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            raise TypeError(f"dtype mismatch: {x.dtype} vs {np.dtype(dtype)}")
        return x
    return Tensor(x, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_finite(arr: np.ndarray, op: str, where: str = "forward") -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(op, where)


# Primitives that cannot turn finite inputs into NaN/Inf skip the output scan.
_SAFE_OPS = frozenset({"reshape", "transpose", "getitem", "concat", "pad_end", "frames",
                       "relu", "sigmoid", "softmax"})


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if op not in _SAFE_OPS:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- graph traversal ------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, parameters: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaves listed in ``parameters`` that the loss does not depend on get an
    all-zero gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if parameters is not None:
        for p in parameters:
            p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            _check_finite(pg, node.op or "?", "backward")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def grad(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "div", (a, b), grad)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise NonFiniteError("log")
    return _make(np.log(xd), "log", (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, "sqrt", (x,), lambda g: (g * 0.5 / out,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _make(out, "relu", (x,), lambda g: (g * (out > 0),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    z = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1 - out),))


# -- reductions and shape -------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), "sum", (x,), grad)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing only, so the scatter in backward is one-to-one."""
    items = index if isinstance(index, tuple) else (index,)
    if not all(isinstance(i, (slice, int, type(Ellipsis))) for i in items):
        raise TypeError("only basic slicing is differentiable")
    shape = x.shape

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[index]), "getitem", (x,), grad)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors),
                 lambda g: tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis)))


def pad_end(x: Tensor, n: int, axis: int = 0) -> Tensor:
    """Append ``n`` zeros along ``axis``."""
    if n == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (0, n)
    length = x.shape[axis]
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, length)
    sl = tuple(sl)
    return _make(np.pad(x.data, widths), "pad_end", (x,), lambda g: (np.ascontiguousarray(g[sl]),))


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def grad(g):
        ga = gb = None
        if a.requires_grad:
            if bd.ndim == 2:
                ga = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(ad.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    if bd.ndim == 2:
        # 2-D GEMM on the flattened batch is markedly faster than batched matmul
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
    else:
        out = ad @ bd
    return _make(out, "matmul", (a, b), grad)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- fused primitives -----------------------------------------------------

def softmax(x: Tensor, axis: int = -1, allow: np.ndarray | None = None) -> Tensor:
    """Shift-stable softmax; entries where ``allow`` is False get exactly zero."""
    xd = x.data
    if allow is not None:
        xd = np.where(allow, xd, -np.inf)
    m = xd.max(axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise ValueError("softmax: a row has no allowed entries")
    e = np.exp(xd - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        gx = out * (g - (g * out).sum(axis=axis, keepdims=True))
        return (gx * 1.01 if "softmax" in _FAULTS else gx,)

    return _make(out.astype(x.dtype, copy=False), "softmax", (x,), grad)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over a zero-length feature axis")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def grad(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if "layer_norm" in _FAULTS:
            dx = dx * 1.01
        flat = g.reshape(-1, d)
        dgamma = (flat * xhat.reshape(-1, d)).sum(axis=0)
        dbeta = flat.sum(axis=0)
        return dx, dgamma, dbeta

    return _make(out.astype(x.dtype, copy=False), "layer_norm", (x, gamma, beta), grad)


def _ola_into(out: np.ndarray, frames: np.ndarray, hop: int) -> None:
    n, size = frames.shape[:2]
    rest = frames.shape[2:]
    if size % hop == 0:
        for j in range(size // hop):
            out[j * hop: j * hop + n * hop] += frames[:, j * hop:(j + 1) * hop].reshape(n * hop, *rest)
    else:
        for w in range(size):
            out[w: w + hop * (n - 1) + 1: hop] += frames[:, w]


def frames(x: Tensor, size: int, hop: int) -> Tensor:
    """Stack windows ``x[t*hop : t*hop+size]`` along a new axis 1.

    Only full windows are returned; the adjoint is :func:`overlap_add`.
    """
    if size <= 0 or hop <= 0:
        raise ValueError("frame size and hop must be positive")
    length = x.shape[0]
    if length < size:
        raise ValueError(f"input length {length} shorter than frame size {size}")
    view = np.lib.stride_tricks.sliding_window_view(x.data, size, axis=0)[::hop]
    out = np.ascontiguousarray(np.moveaxis(view, -1, 1))
    shape, dtype = x.shape, x.dtype

    def grad(g):
        gx = np.zeros(shape, dtype=dtype)
        _ola_into(gx, g, hop)
        return (gx,)

    return _make(out, "frames", (x,), grad)


def overlap_add(fr: Tensor, hop: int) -> Tensor:
    """Sum windows of ``fr`` (n, size, ...) placed ``hop`` apart."""
    n, size = fr.shape[:2]
    length = (n - 1) * hop + size
    out = np.zeros((length,) + fr.shape[2:], dtype=fr.dtype)
    _ola_into(out, fr.data, hop)

    def grad(g):
        view = np.lib.stride_tricks.sliding_window_view(g, size, axis=0)[::hop]
        return (np.ascontiguousarray(np.moveaxis(view, -1, 1)),)

    return _make(out, "overlap_add", (fr,), grad)
