"""Dense fp64 tensors with a dynamic reverse-mode autodiff tape.

Every value in the library flows through this module. Design points:

- fp64 only, row-major numpy buffers underneath.
- The tape is rebuilt on every forward pass: each op output keeps closures
  over its parents, `backward()` walks them in reverse topological order.
- Math primitives: matmul, add, sub, scalar multiply, elementwise multiply,
  concat, sum/mean, max (argmax recorded), relu, softmax, layer_norm,
  arccos (input clamped), cos, sqrt, log, exp, l2_normalize.
- Structural plumbing (reshape, transpose, gather, pad2d) is tape-recorded
  too; convolution and neighbor lookups are built from it.
- Every primitive checks its output for NaN/Inf and raises NumericError
  naming itself; silent non-finite state is never allowed.
"""

from __future__ import annotations

import warnings
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

ARCCOS_EPS = 1e-7  # clamp band keeping d/dx arccos finite


class Tensor:
    """A dense fp64 array plus an optional gradient buffer.

    `grad` is populated by `backward()` and accumulates across calls until
    explicitly cleared (the optimizer clears it after each step).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor constructor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._bwd = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routing through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return smul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return smul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    """Wrap a primitive's output, recording it on the tape when needed."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from primitive '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._bwd = bwd
    else:
        out._parents = ()
        out._bwd = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# binary arithmetic
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2D, or batched with identical leading batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise DimensionError(f"matmul rank mismatch: {a.shape} vs {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _result("matmul", out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}") from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _result("add", out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub shape mismatch: {a.shape} vs {b.shape}") from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _result("sub", out_data, (a, b), bwd)


def smul(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    s = float(s)
    out_data = a.data * s

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _result("smul", out_data, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting (layer-norm affines, masks)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}") from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result("mul", out_data, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            "concat shape mismatch: " + " vs ".join(str(t.shape) for t in tensors)
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result("concat", out_data, tensors, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _result("reshape", out_data, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _result("transpose", out_data, (a,), bwd)


def gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select along axis 0 with an integer index array of any shape.

    Output shape is indices.shape + a.shape[1:]. Backward scatter-adds, so
    repeated indices accumulate.
    """
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ContractError(
            f"gather index out of range for leading dim {a.data.shape[0]}"
        )
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx.reshape(-1), g.reshape((-1,) + a.data.shape[1:]))
            a._accumulate(acc)

    return _result("gather", out_data, (a,), bwd)


def pad2d(a: Tensor, pad: int) -> Tensor:
    """Zero-pad the last two axes by `pad` on every side."""
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise DimensionError(f"pad2d needs rank >= 2, got {a.shape}")
    width = [(0, 0)] * (a.data.ndim - 2) + [(pad, pad), (pad, pad)]
    out_data = np.pad(a.data, width)

    def bwd(g):
        if a.requires_grad:
            sl = (Ellipsis, slice(pad, g.shape[-2] - pad), slice(pad, g.shape[-1] - pad))
            a._accumulate(g[sl])

    return _result("pad2d", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge, a.data.shape).copy())

    return _result("sum", out_data, (a,), bwd)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge / n, a.data.shape).copy())

    return _result("mean", out_data, (a,), bwd)


def tmax(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; the argmax (first hit on ties) routes gradients."""
    a = _as_tensor(a)
    out_data = a.data.max(axis=axis)
    arg = np.argmax(a.data, axis=axis)

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.put_along_axis(
                acc, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis
            )
            a._accumulate(acc)

    return _result("max", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _result("relu", out_data, (a,), bwd)


def arccos(a: Tensor) -> Tensor:
    """arccos of the input clamped to [-1+eps, 1-eps]; zero grad where clamped."""
    a = _as_tensor(a)
    clamped = np.clip(a.data, -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
    inside = (a.data > -1.0 + ARCCOS_EPS) & (a.data < 1.0 - ARCCOS_EPS)
    out_data = np.arccos(clamped)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.where(inside, -1.0 / np.sqrt(1.0 - clamped**2), 0.0))

    return _result("arccos", out_data, (a,), bwd)


def cos(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.cos(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(-g * np.sin(a.data))

    return _result("cos", out_data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _result("sqrt", out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _result("log", out_data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _result("exp", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# fused row-wise ops
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; rows sum to one."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _result("softmax", out_data, (a,), bwd)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis` (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bwd(g):
        if a.requires_grad:
            gm = g.mean(axis=axis, keepdims=True)
            gx = (g * xhat).mean(axis=axis, keepdims=True)
            a._accumulate(inv * (g - gm - xhat * gx))

    return _result("layer_norm", xhat, (a,), bwd)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale rows to unit Euclidean norm. Zero rows surface as NumericError."""
    a = _as_tensor(a)
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / norm

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate((g - out_data * dot) / norm)

    return _result("l2_normalize", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def backward(loss: Tensor, expected: Iterable[Tensor] | None = None) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate into every reachable tensor with requires_grad.
    `expected` (test mode) warns about tensors the tape never reached.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    if expected is not None:
        for t in expected:
            tensor = t.value if hasattr(t, "value") else t
            if id(tensor) not in visited:
                name = getattr(t, "name", "<anonymous>")
                warnings.warn(f"parameter {name} is unreachable from the loss")
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._bwd is not None:
            if node.grad is not None:
                node._bwd(node.grad)
            # interior node: its grad is scratch; drop tape refs so large
            # activations are freed as soon as the sweep passes them
            node._bwd = None
            node._parents = ()
            node.grad = None
