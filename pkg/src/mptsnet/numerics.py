"""
Dense tensors with reverse-mode automatic differentiation.

Only the operations the classifier needs are provided. Every op takes and
returns :class:`Tensor`; when any input requires a gradient the output
remembers its parents and a backward rule. :func:`backward` linearises that
graph into a :class:`Tape` (topological order) and replays it in reverse.

Broadcasting follows NumPy's trailing-dimension rule, restricted so that the
result shape always equals the shape of one of the operands. Mutual
broadcasting such as ``(3, 1) + (1, 4)`` is rejected.

Gradients accumulate additively into leaf tensors; call
:meth:`Tensor.zero_grad` between optimisation steps.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, DataError, ShapeError, UsageError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors (e.g. float64 for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other, like=self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other, like=self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division is only supported by constants")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


@dataclass
class Tape:
    """Operations reachable from a scalar loss, in topological order."""

    nodes: list[Tensor]

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf requiring grad.

    Interior tensors receive their gradient in ``.grad`` as well. The graph
    is consumed: interior tensors are detached afterwards, so a second call
    on the same loss raises.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    tape = Tape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in tape.nodes:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.requires_grad = False


# ---------------------------------------------------------------- elementwise


def _binary_shape(a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None
    if shape != a.shape and shape != b.shape:
        raise ShapeError(f"mutual broadcasting of {a.shape} and {b.shape} is not supported")
    return shape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _binary_shape(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _binary_shape(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _binary_shape(a.data, b.data)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make((ad * bd).astype(ad.dtype, copy=False), (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, n] @ b[..., n, p]``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def back(g):
        pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _make(out, (x,), back)


# ------------------------------------------------------------------ reductions


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is not None:
        axis = _check_axis(x, axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _make(np.asarray(out, dtype=x.dtype), (x,), back)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[_check_axis(x, axis)]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back)


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return ((p * (g / n)).astype(z.dtype, copy=False),)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), back)


# --------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim if -x.ndim <= a < x.ndim else -1 for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _check_axis(tensors[0], axis)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def pad(x: Tensor, axis: int, before: int = 0, after: int = 0) -> Tensor:
    """Zero-pad along one axis."""
    axis = _check_axis(x, axis)
    if before < 0 or after < 0:
        raise ShapeError("padding must be non-negative")
    if before == 0 and after == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    n = x.shape[axis]

    def back(g):
        return (np.take(g, np.arange(before, before + n), axis=axis),)

    return _make(np.pad(x.data, widths), (x,), back)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start + length)`` along ``axis``."""
    axis = _check_axis(x, axis)
    n = x.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise ShapeError(f"slice [{start}, {start + length}) out of range for extent {n}")
    if start == 0 and length == n:
        return x
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    out = np.ascontiguousarray(x.data[tuple(index)])
    widths = [(0, 0)] * x.ndim
    widths[axis] = (start, n - start - length)
    return _make(out, (x,), lambda g: (np.pad(g, widths),))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``x`` to ``shape`` (trailing-dimension rule); backward sums."""
    shape = tuple(shape)
    src = x.shape
    try:
        if np.broadcast_shapes(src, shape) != shape:
            raise ValueError
    except ValueError:
        raise ShapeError(f"cannot expand {src} to {shape}") from None
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _make(out, (x,), lambda g: (_unbroadcast(g, src),))


# ----------------------------------------------------------------- convolution


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1-D cross-correlation.

    ``x`` is ``(c_in, L)`` or ``(N, c_in, L)``; ``w`` is ``(c_out, c_in, ker)``
    with odd ``ker``; output has the input's length.
    """
    if w.ndim != 3:
        raise ShapeError(f"conv weight must be (c_out, c_in, ker), got {w.shape}")
    c_out, c_in, ker = w.shape
    if ker % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {ker}")
    unbatched = x.ndim == 2
    if x.ndim not in (2, 3) or x.shape[-2] != c_in:
        raise ShapeError(f"conv input {x.shape} incompatible with weight {w.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv bias must be ({c_out},), got {bias.shape}")

    xd = x.data[None] if unbatched else x.data
    n, _, length = xd.shape
    half = (ker - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (half, half)))
    # (N, c_in, L, ker) -> (N*L, c_in*ker)
    cols = sliding_window_view(xp, ker, axis=-1).transpose(0, 2, 1, 3).reshape(n * length, c_in * ker)
    wmat = w.data.reshape(c_out, c_in * ker)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, length, c_out).transpose(0, 2, 1))
    if unbatched:
        out = out[0]

    def back(g):
        gb = g[None] if unbatched else g
        gmat = gb.transpose(0, 2, 1).reshape(n * length, c_out)
        gw = (gmat.T @ cols).reshape(c_out, c_in, ker)
        gcols = (gmat @ wmat).reshape(n, length, c_in, ker)
        gxp = np.zeros_like(xp)
        for i in range(ker):
            gxp[:, :, i:i + length] += gcols[:, :, :, i].transpose(0, 2, 1)
        gx = gxp[:, :, half:half + length]
        gx = np.ascontiguousarray(gx[0] if unbatched else gx)
        gbias = gb.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gbias) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return _make(out, parents, back)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data), dtype=x.dtype)
