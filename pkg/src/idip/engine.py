"""Reverse-mode autodiff over dense numpy tensors.

Only the operations the restoration network and its masked loss need are
provided: strict same-shape elementwise arithmetic, leaky ReLU, sigmoid,
nearest-neighbour upsampling, channel concatenation, strided 2-D
convolution with zero or reflection padding, and a weighted MSE
reduction.  There is deliberately no general broadcasting and no view
machinery beyond what those operations require.

Typical use::

    x = Tensor(np.ones((1, 3, 8, 8), np.float32), requires_grad=True)
    y = conv2d(x, kernel, bias, stride=1, padding="reflect", pad=1)
    loss = mse_reduce(y, target, weight)
    backward(loss)        # populates x.grad, kernel.grad, bias.grad

Gradients accumulate into ``Tensor.grad``; a graph can be walked backward
exactly once and is freed afterwards.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "ShapeMismatchError",
    "TapeConsumedError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "leaky_relu",
    "sigmoid",
    "upsample_nearest",
    "concat_channels",
    "conv2d",
    "mse_reduce",
    "tensor_sum",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes (or dtypes)."""


class TapeConsumedError(RuntimeError):
    """A second backward pass was attempted on an already-walked graph."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional array with optional gradient-tape participation.

    ``data`` is a numpy float32/float64 array, treated as immutable once
    the tensor is created; ``grad`` is lazily allocated and always matches
    ``data``'s shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, _as_tensor_operand(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor_operand(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor_operand(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    raise TypeError(f"expected Tensor operand, got {type(other).__name__}")


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shape {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeMismatchError(f"{op}: dtype {a.dtype} vs {b.dtype}")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _from_op(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


class GradientTape:
    """Topologically ordered record of the ops reachable from one output.

    Built lazily by :meth:`trace`; every node's inputs precede it.  A tape
    may be walked backward once, after which the recorded closures are
    dropped and a second walk raises :class:`TapeConsumedError`.
    """

    def __init__(self, root: Tensor, nodes: list):
        self.root = root
        self.nodes = nodes
        self._walked = False

    @classmethod
    def trace(cls, root: Tensor) -> "GradientTape":
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
            if node._consumed:
                raise TapeConsumedError("graph already walked backward; build a fresh forward pass")
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(root, order)

    def backward(self) -> None:
        if self._walked:
            raise TapeConsumedError("this tape has already been walked backward")
        self._walked = True
        root = self.root
        if root.data.size != 1:
            raise ShapeMismatchError(f"backward requires a scalar loss, got shape {root.shape}")
        _accumulate(root, np.ones_like(root.data))
        for node in reversed(self.nodes):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)
        for node in self.nodes:
            if node._grad_fn is not None:
                node._grad_fn = None
                node._parents = ()
                node._consumed = True


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    GradientTape.trace(loss).backward()


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _from_op(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _from_op(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _check_same(a, b, "mul")

    def grad_fn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _from_op(a.data * b.data, (a, b), grad_fn)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def grad_fn(g):
        _accumulate(a, g * s)

    return _from_op(a.data * s, (a,), grad_fn)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    positive = a.data > 0
    out = np.where(positive, a.data, a.data * slope)

    def grad_fn(g):
        _accumulate(a, np.where(positive, g, g * slope))

    return _from_op(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    d = a.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        _accumulate(a, g * (out * (1.0 - out)))

    return _from_op(out, (a,), grad_fn)


def tensor_sum(a: Tensor) -> Tensor:
    def grad_fn(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _from_op(np.sum(a.data), (a,), grad_fn)


def upsample_nearest(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of an NCHW tensor by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    if a.data.ndim != 4:
        raise ShapeMismatchError(f"upsample_nearest expects NCHW input, got shape {a.shape}")
    out = a.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = a.shape

    def grad_fn(g):
        folded = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        _accumulate(a, folded)

    return _from_op(out, (a,), grad_fn)


def concat_channels(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat_channels needs at least one tensor")
    first = ts[0]
    for t in ts[1:]:
        if t.data.ndim != 4 or first.data.ndim != 4:
            raise ShapeMismatchError("concat_channels expects NCHW tensors")
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeMismatchError(f"concat_channels: shape {t.shape} vs {first.shape}")
        if t.dtype != first.dtype:
            raise ShapeMismatchError(f"concat_channels: dtype {t.dtype} vs {first.dtype}")
    out = np.concatenate([t.data for t in ts], axis=1)
    sizes = [t.shape[1] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            _accumulate(t, g[:, lo:hi])

    return _from_op(out, tuple(ts), grad_fn)


# ---------------------------------------------------------------------------
# convolution


def _pad_input(x: np.ndarray, pad: int, padding: str) -> np.ndarray:
    if pad == 0:
        return x
    if padding == "zero":
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if padding == "reflect":
        if pad > x.shape[2] - 1 or pad > x.shape[3] - 1:
            raise ValueError(
                f"reflection pad {pad} too large for spatial size {x.shape[2]}x{x.shape[3]}"
            )
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    raise ValueError(f"padding must be 'zero' or 'reflect', got {padding!r}")


def _fold_reflect_axis(g: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Adjoint of reflection padding along one spatial axis."""
    size = g.shape[axis] - 2 * pad
    core = np.take(g, range(pad, pad + size), axis=axis).copy()
    left = np.flip(np.take(g, range(0, pad), axis=axis), axis=axis)
    right = np.flip(np.take(g, range(pad + size, pad + size + pad), axis=axis), axis=axis)
    sl = [slice(None)] * g.ndim
    sl[axis] = slice(1, 1 + pad)
    core[tuple(sl)] += left
    sl[axis] = slice(size - 1 - pad, size - 1)
    core[tuple(sl)] += right
    return core


def _unpad_grad(gpad: np.ndarray, pad: int, padding: str) -> np.ndarray:
    if pad == 0:
        return gpad
    if padding == "zero":
        return gpad[:, :, pad:-pad, pad:-pad]
    return _fold_reflect_axis(_fold_reflect_axis(gpad, pad, 2), pad, 3)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: str = "reflect",
    pad: int = 1,
) -> Tensor:
    """2-D cross-correlation of NCHW input with an OIHW kernel plus bias.

    Output spatial size is ``(H + 2*pad - kh)//stride + 1``.  Gradients flow
    to the input, the kernel and the bias.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d input must be NCHW, got shape {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d kernel must be OIHW, got shape {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel spatial dims must be odd, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeMismatchError(f"conv2d: input has {x.shape[1]} channels, kernel expects {cin}")
    if bias.data.ndim != 1 or bias.shape[0] != cout:
        raise ShapeMismatchError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if x.dtype != kernel.dtype or x.dtype != bias.dtype:
        raise ShapeMismatchError("conv2d: mixed dtypes")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    if int(pad) != pad or pad < 0:
        raise ValueError(f"pad must be a non-negative integer, got {pad}")
    stride, pad = int(stride), int(pad)

    xp = _pad_input(x.data, pad, padding)
    n, _, hp, wp = xp.shape
    if hp < kh or wp < kw:
        raise ShapeMismatchError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias.data.reshape(1, cout, 1, 1)

    def grad_fn(g):
        _accumulate(bias, g.sum(axis=(0, 2, 3)))
        _accumulate(kernel, np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            spread = np.tensordot(g, kernel.data, axes=([1], [0]))  # N,Ho,Wo,Ci,kh,kw
            spread = np.moveaxis(spread, 3, 1)
            gpad = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gpad[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += spread[
                        :, :, :, :, u, v
                    ]
            _accumulate(x, _unpad_grad(gpad, pad, padding))

    return _from_op(out, (x, kernel, bias), grad_fn)


# ---------------------------------------------------------------------------
# reduction


def mse_reduce(pred: Tensor, target: Tensor, weight: Tensor) -> Tensor:
    """Weighted squared error normalised by the number of nonzero weights.

    Returns ``sum(weight * (pred - target)**2) / max(1, count(weight != 0))``
    as a scalar tensor, so the loss magnitude is invariant to how many
    entries the weight actually selects.
    """
    _check_same(pred, target, "mse_reduce")
    _check_same(pred, weight, "mse_reduce")
    denom = max(1, int(np.count_nonzero(weight.data)))
    diff = pred.data - target.data
    value = np.sum(weight.data * diff * diff) / denom

    def grad_fn(g):
        common = weight.data * diff * (2.0 * float(g) / denom)
        _accumulate(pred, common)
        _accumulate(target, -common)

    return _from_op(np.asarray(value, dtype=pred.data.dtype), (pred, target, weight), grad_fn)
