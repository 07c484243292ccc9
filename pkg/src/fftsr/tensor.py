"""Dense tensors with reverse-mode automatic differentiation.

The engine is numpy-backed: a :class:`Tensor` wraps an ndarray plus an
optional gradient accumulator and a record of the operation that produced
it. Calling :meth:`Tensor.backward` on a scalar walks the graph in reverse
topological order and accumulates ``d(loss)/d(leaf)`` into every tracked
leaf. Wrapped values are never mutated in place, so a node's saved forward
context stays valid for the backward pass.

Default compute dtype is float32; gradient-check tests build the same
graphs in float64. With float64 operands, ``log`` and ``sqrt`` raise
:class:`DomainError` on negative input (strict mode); with float32 they
propagate NaN the way numpy does.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import AxisError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "pow",
    "sqrt",
    "log",
    "exp",
    "sigmoid",
    "tanh",
    "relu",
    "clamp",
    "absolute",
    "sum",
    "mean",
    "amax",
    "matmul",
    "reshape",
    "concat",
    "narrow_channels",
    "split_channels",
    "conv2d",
    "sep_filter2d",
    "batch_norm2d",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        if arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = None

    @staticmethod
    def _from_op(data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        tracked = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        if tracked:
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        else:
            out._parents = ()
            out._backward = None
            out._op = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray):
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
        if self.grad is None:
            self.grad = np.ascontiguousarray(g)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Populate ``grad`` on every reachable tracked leaf.

        The loss must be scalar (size 1). Repeated calls accumulate into
        existing grads; callers zero them between steps.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---- elementwise binary ----


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    _check_broadcast(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._from_op(a.data / b.data, (a, b), backward, "div")


# ---- elementwise unary ----


def pow(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a scalar exponent."""
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return Tensor._from_op(out_data, (a,), backward, "pow")


def _strict_domain(a: Tensor, op: str):
    # float64 is the strict mode used by the numeric suites
    if a.data.dtype == np.float64 and np.any(a.data < 0):
        raise DomainError(f"{op}: negative input in 64-bit strict mode")


def sqrt(a: Tensor) -> Tensor:
    _strict_domain(a, "sqrt")
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (0.5 / out_data))

    return Tensor._from_op(out_data, (a,), backward, "sqrt")


def log(a: Tensor) -> Tensor:
    _strict_domain(a, "log")
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._from_op(out_data, (a,), backward, "log")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return Tensor._from_op(out_data, (a,), backward, "exp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return Tensor._from_op(out_data, (a,), backward, "relu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was inside."""
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accumulate(g * inside)

    return Tensor._from_op(out_data, (a,), backward, "clamp")


def absolute(a: Tensor) -> Tensor:
    """|a|, with subgradient sign(a) (0 at the origin)."""
    out_data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return Tensor._from_op(out_data, (a,), backward, "abs")


# ---- reductions ----


def _norm_axes(axes, ndim: int):
    if axes is None:
        return None
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise AxisError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(dict.fromkeys(out))


def _identity(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g)

    return Tensor._from_op(a.data, (a,), backward, "identity")


def sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    if axes == ():
        return _identity(a)
    out_data = np.asarray(a.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        if a.requires_grad:
            if not keepdims and axes is not None:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return Tensor._from_op(out_data, (a,), backward, "sum")


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    if axes == ():
        return _identity(a)
    out_data = np.asarray(a.data.mean(axis=axes, keepdims=keepdims))
    if axes is None:
        count = a.data.size
    else:
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def backward(g):
        if a.requires_grad:
            if not keepdims and axes is not None:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape) / count)

    return Tensor._from_op(out_data, (a,), backward, "mean")


def amax(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties split the upstream gradient equally."""
    axes = _norm_axes(axes, a.data.ndim)
    if axes == ():
        return _identity(a)
    out_data = np.asarray(a.data.max(axis=axes, keepdims=keepdims))

    def backward(g):
        if a.requires_grad:
            full = a.data.max(axis=axes, keepdims=True)
            hit = a.data == full
            counts = hit.sum(axis=axes, keepdims=True)
            gg = g if keepdims or axes is None else np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(gg, a.shape) * hit / counts)

    return Tensor._from_op(out_data, (a,), backward, "max")


# ---- structure ----


def matmul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul supports 2-D operands only")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape[1]} vs {b.shape[0]}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), backward, "reshape")


def concat(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = [p for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + n)
                p._accumulate(g[tuple(index)])
            offset += n

    return Tensor._from_op(out_data, tuple(parts), backward, "concat")


def narrow_channels(a: Tensor, start: int, length: int) -> Tensor:
    """Slice ``length`` channels starting at ``start`` along axis 1."""
    if start < 0 or start + length > a.shape[1]:
        raise ShapeError(f"channel slice [{start}:{start + length}] outside {a.shape[1]}")
    out_data = a.data[:, start : start + length]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.shape, dtype=g.dtype)
            full[:, start : start + length] = g
            a._accumulate(full)

    return Tensor._from_op(out_data, (a,), backward, "narrow")


def split_channels(a: Tensor, sizes: Sequence[int]) -> tuple:
    """Split along the channel axis into consecutive groups of ``sizes``."""
    total = 0
    outs = []
    for n in sizes:
        outs.append(narrow_channels(a, total, n))
        total += n
    if total != a.shape[1]:
        raise ShapeError(f"split sizes {tuple(sizes)} do not cover {a.shape[1]} channels")
    return tuple(outs)


# ---- spatial padding (shared by conv2d and the loss filters) ----


def _pad_spatial(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    spec = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    if mode == "zero":
        return np.pad(x, spec)
    if mode == "reflect":
        h, w = x.shape[-2], x.shape[-1]
        if pad > h - 1 or pad > w - 1:
            raise ShapeError(f"reflect pad {pad} too large for spatial dims {(h, w)}")
        return np.pad(x, spec, mode="reflect")
    raise ValueError(f"unknown pad mode {mode!r}")


def _fold_axis(g: np.ndarray, pad: int, n: int, axis: int, mode: str) -> np.ndarray:
    """Adjoint of 1-D padding along ``axis``: (n + 2*pad) -> n."""
    if pad == 0:
        return g
    g = np.moveaxis(g, axis, -1)
    core = g[..., pad : pad + n].copy()
    if mode == "reflect":
        for i in range(pad):
            core[..., pad - i] += g[..., i]
        for j in range(pad):
            core[..., n - 2 - j] += g[..., pad + n + j]
    return np.moveaxis(core, -1, axis)


def _unpad_grad(g: np.ndarray, pad: int, shape, mode: str) -> np.ndarray:
    h, w = shape[-2], shape[-1]
    g = _fold_axis(g, pad, w, -1, mode)
    g = _fold_axis(g, pad, h, -2, mode)
    return g


# ---- convolution ----


def _pad_cnhw(xt: np.ndarray, pad: int, mode: str) -> np.ndarray:
    """Spatial padding of a channel-first (C, N, H, W) block."""
    if pad == 0:
        return xt
    c, n, h, w = xt.shape
    p = pad
    if mode == "zero":
        out = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=xt.dtype)
        out[:, :, p : p + h, p : p + w] = xt
        return out
    if mode != "reflect":
        raise ValueError(f"unknown pad mode {mode!r}")
    if p > h - 1 or p > w - 1:
        raise ShapeError(f"reflect pad {p} too large for spatial dims {(h, w)}")
    out = np.empty((c, n, h + 2 * p, w + 2 * p), dtype=xt.dtype)
    out[:, :, p : p + h, p : p + w] = xt
    # mirror columns off the core, then rows off the full-width strip
    rstop = w - 2 - p
    out[:, :, p : p + h, :p] = xt[:, :, :, p:0:-1]
    out[:, :, p : p + h, p + w :] = xt[:, :, :, w - 2 : (rstop if rstop >= 0 else None) : -1]
    bstop = h - 2
    out[:, :, :p, :] = out[:, :, 2 * p : p : -1, :]
    out[:, :, p + h :, :] = out[:, :, p + h - 2 : (bstop if bstop >= 0 else None) : -1, :]
    return out


def _im2col(xtp: np.ndarray, kh: int, kw: int, stride: int):
    """(C, N, Hp, Wp) -> ((kh*kw*C, N*OH*OW) col matrix, OH, OW).

    Channel-first input makes each of the kh*kw fills a plain strided
    slice copy, which beats a sliding-window gather at these sizes.
    """
    c, n, hp, wp = xtp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = np.empty((kh, kw, c, n, oh, ow), dtype=xtp.dtype)
    for i in range(kh):
        hi = i + stride * (oh - 1) + 1
        for j in range(kw):
            wj = j + stride * (ow - 1) + 1
            cols[i, j] = xtp[:, :, i:hi:stride, j:wj:stride]
    return cols.reshape(kh * kw * c, n * oh * ow), oh, ow


def _conv1x1_forward(x: np.ndarray, kmat: np.ndarray) -> np.ndarray:
    n, cin, h, w = x.shape
    out = kmat @ x.reshape(n, cin, h * w)
    return out.reshape(n, kmat.shape[0], h, w)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zero",
) -> Tensor:
    """2-D cross-correlation over NCHW input.

    kernel is (Cout, Cin, kh, kw); output spatial size is
    floor((H + 2*padding - kh) / stride) + 1. Backward produces gradients
    for the input, the kernel, and the bias.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIHW kernel")
    n, cin, h, w = x.shape
    cout, cink, kh, kw = kernel.shape
    if cin != cink:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cink}")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        kmat = kernel.data.reshape(cout, cin)
        out_data = _conv1x1_forward(x.data, kmat)
        if bias is not None:
            out_data += bias.data.reshape(1, cout, 1, 1)
        parents = (x, kernel) if bias is None else (x, kernel, bias)

        def backward_1x1(g):
            gflat = g.reshape(n, cout, h * w)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            if kernel.requires_grad:
                xt = x.data.reshape(n, cin, h * w).transpose(0, 2, 1)
                kernel._accumulate((gflat @ xt).sum(axis=0).reshape(kernel.shape))
            if x.requires_grad:
                x._accumulate((kmat.T @ gflat).reshape(x.shape))

        return Tensor._from_op(out_data, parents, backward_1x1, "conv1x1")

    xtp = _pad_cnhw(np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)), padding, pad_mode)
    cols, oh, ow = _im2col(xtp, kh, kw, stride)
    # kernel laid out to match the (kh, kw, cin) column ordering
    kmat = np.ascontiguousarray(kernel.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout))
    out = kmat.T @ cols
    out_data = np.ascontiguousarray(out.reshape(cout, n, oh, ow).transpose(1, 0, 2, 3))
    if bias is not None:
        out_data += bias.data.reshape(1, cout, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * oh * ow)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gk = (gmat @ cols.T).T.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
            kernel._accumulate(np.ascontiguousarray(gk))
        if x.requires_grad:
            gcols = (kmat @ gmat).reshape(kh, kw, cin, n, oh, ow)
            gpad = np.zeros_like(xtp)
            for i in range(kh):
                hi = i + stride * (oh - 1) + 1
                for j in range(kw):
                    wj = j + stride * (ow - 1) + 1
                    gpad[:, :, i:hi:stride, j:wj:stride] += gcols[i, j]
            gt = _unpad_grad(gpad, padding, (cin, n, h, w), pad_mode)
            x._accumulate(np.ascontiguousarray(gt.transpose(1, 0, 2, 3)))

    return Tensor._from_op(out_data, parents, backward, "conv2d")


# ---- separable spatial filtering (loss windows) ----

_FILTER_MAT_CACHE: dict = {}


def _filter_matrix(n: int, taps: np.ndarray, mode: str, dtype) -> np.ndarray:
    """Banded (n, n) matrix applying a 1-D correlation with boundary handling."""
    key = (n, taps.tobytes(), mode, np.dtype(dtype).name)
    hit = _FILTER_MAT_CACHE.get(key)
    if hit is not None:
        return hit
    if mode not in ("reflect", "zero"):
        raise ValueError(f"unknown filter mode {mode!r}")
    k = taps.size
    center = k // 2
    mat = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for t in range(k):
            j = i + t - center
            if 0 <= j < n:
                mat[i, j] += taps[t]
            elif mode == "reflect":
                mat[i, -j if j < 0 else 2 * n - 2 - j] += taps[t]
    mat = mat.astype(dtype)
    _FILTER_MAT_CACHE[key] = mat
    return mat


def sep_filter2d(x: Tensor, taps_h: np.ndarray, taps_w: np.ndarray, mode: str = "reflect") -> Tensor:
    """Separable 2-D correlation of an NCHW tensor, same-size output.

    Equivalent to conv2d with kernel ``outer(taps_h, taps_w)`` applied
    per channel, but runs as two cached banded matrix products.
    """
    if x.data.ndim != 4:
        raise ShapeError("sep_filter2d expects NCHW input")
    h, w = x.shape[2], x.shape[3]
    taps_h = np.asarray(taps_h, dtype=np.float64)
    taps_w = np.asarray(taps_w, dtype=np.float64)
    if mode == "reflect" and (taps_h.size // 2 > h - 1 or taps_w.size // 2 > w - 1):
        raise ShapeError(f"filter taps too wide for spatial dims {(h, w)}")
    mh = _filter_matrix(h, taps_h, mode, x.data.dtype)
    mw = _filter_matrix(w, taps_w, mode, x.data.dtype)
    out_data = np.swapaxes(np.swapaxes(x.data, -1, -2) @ mh.T, -1, -2) @ mw.T

    def backward(g):
        if x.requires_grad:
            gx = np.swapaxes(np.swapaxes(g @ mw, -1, -2) @ mh, -1, -2)
            x._accumulate(np.ascontiguousarray(gx))

    return Tensor._from_op(np.ascontiguousarray(out_data), (x,), backward, "sep_filter2d")


# ---- batch normalization ----


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel batch normalization over an NCHW tensor.

    Train mode normalizes by batch statistics and returns updated running
    stats (new arrays; the caller rebinds its buffers). Eval mode uses the
    provided running stats and returns them unchanged.
    """
    if x.data.ndim != 4:
        raise ShapeError("batch_norm2d expects NCHW input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    gview = gamma.data.reshape(1, c, 1, 1)
    bview = beta.data.reshape(1, c, 1, 1)

    if training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = np.einsum("nchw,nchw->c", xc, xc) / (x.data.size // c)
        var = var.reshape(1, c, 1, 1)
        inv = 1.0 / np.sqrt(var + eps)
        # single fused pass: out = xc * (gamma * inv) + beta
        out_data = xc * (gview * inv) + bview
        new_mean = (1.0 - momentum) * running_mean + momentum * mu.reshape(c)
        new_var = (1.0 - momentum) * running_var + momentum * var.reshape(c)
        m = x.data.size // c

        def backward(g):
            xhat = xc * inv
            if gamma.requires_grad:
                gamma._accumulate(np.einsum("nchw,nchw->c", g, xhat))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dxhat = g * gview
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                x._accumulate(inv * (dxhat - s1 / m - xhat * s2 / m))

        out = Tensor._from_op(out_data, (x, gamma, beta), backward, "batch_norm")
        return out, new_mean, new_var

    inv = 1.0 / np.sqrt(running_var.reshape(1, c, 1, 1) + eps)
    xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv
    out_data = gview * xhat + bview

    def backward_eval(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accumulate(g * gview * inv)

    out = Tensor._from_op(out_data, (x, gamma, beta), backward_eval, "batch_norm_eval")
    return out, running_mean, running_var
