"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation
returns a new tensor that remembers its inputs and a backward rule; the
recording order is a valid topological order, so ``backward()`` on a
scalar replays the trace in reverse (a Wengert list) and accumulates
gradients into every leaf that asked for them.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes, a scalar on either side, or a right operand whose shape is a
trailing suffix of the left's (bias-style leading broadcast). Anything
fancier must go through :func:`broadcast_to` or an explicit reshape so
that shape bugs surface where they are made.

Everything is float64; gradient checking against central finite
differences is the package's primary verification mechanism and needs
the headroom.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "as_tensor",
    "constant",
    "parameter",
    "matmul",
    "concat",
    "stack",
    "slice_axis",
    "broadcast_to",
    "masked_fill",
    "scale_by",
    "masked_select",
    "relu",
    "tanh",
    "sigmoid",
    "absolute",
    "softmax_lastdim",
    "layer_norm",
    "conv1d_time",
]

_ids = itertools.count()


class _GradMode(threading.local):
    enabled = True


_mode = _GradMode()


class no_grad:
    """Context manager that disables tape recording (e.g. for evaluation)."""

    def __enter__(self):
        self._prev = _mode.enabled
        _mode.enabled = False
        return self

    def __exit__(self, *exc):
        _mode.enabled = self._prev
        return False


class Tensor:
    """A dense n-dimensional float64 array, optionally on the gradient tape.

    ``grad`` is ``None`` until ``backward()`` populates it; repeated
    backward passes accumulate unless :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_rule", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable[[np.ndarray], tuple] | None = None
        self._id = next(_ids)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad ancestor of this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
        Tape.trace(self).backward(self)

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not a tape primitive; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=True)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return as_tensor(x)


def parameter(x) -> Tensor:
    """Wrap an array as a trainable leaf."""
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def _record(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor(data)
    if _mode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._rule = rule
    return out


class Tape:
    """The recorded computation reaching one output, in creation order.

    Creation order is topological by construction (an op's inputs exist
    before the op records), so ``backward`` walks the records exactly
    once, in reverse.
    """

    def __init__(self, records: list[Tensor]):
        self.records = records

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        records: list[Tensor] = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or node._rule is None:
                continue
            seen.add(id(node))
            records.append(node)
            stack.extend(node._parents)
        records.sort(key=lambda t: t._id)
        return cls(records)

    def backward(self, root: Tensor) -> None:
        if root._rule is None:
            # Scalar leaf: d(root)/d(root) = 1.
            if root.requires_grad:
                seed = np.ones_like(root.data)
                root.grad = seed if root.grad is None else root.grad + seed
            return
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec), None)
            if g is None:
                continue
            rec.grad = g if rec.grad is None else rec.grad + g
            for parent, contrib in zip(rec._parents, rec._rule(g)):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent._rule is None:
                    parent.grad = contrib.copy() if parent.grad is None else parent.grad + contrib
                else:
                    key = id(parent)
                    pending[key] = contrib if key not in pending else pending[key] + contrib


# -- shape plumbing -----------------------------------------------------


def _is_scalar_shape(shape: tuple[int, ...]) -> bool:
    return int(np.prod(shape, dtype=np.int64)) == 1


def _check_elementwise(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb or _is_scalar_shape(sa) or _is_scalar_shape(sb):
        return
    big, small = (sa, sb) if len(sa) >= len(sb) else (sb, sa)
    if len(big) > len(small) and big[len(big) - len(small):] == small:
        return
    raise ShapeError(
        f"elementwise op on shapes {sa} and {sb}: only equal shapes, scalars, or a "
        f"trailing-suffix operand broadcast are allowed; use broadcast_to/reshape explicitly"
    )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy-style broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _record(a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    return _record(a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a.shape, b.shape)
    da, db = a.data, b.data

    def rule(g):
        return _reduce_to(g * db, da.shape), _reduce_to(g * da, db.shape)

    return _record(da * db, (a, b), rule)


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading batch dims broadcast numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from None
    da, db = a.data, b.data

    def rule(g):
        ga = _reduce_to(g @ np.swapaxes(db, -1, -2), da.shape)
        gb = _reduce_to(np.swapaxes(da, -1, -2) @ g, db.shape)
        return ga, gb

    return _record(da @ db, (a, b), rule)


# -- reductions and reshaping --------------------------------------------


def _reduce(t: Tensor, axis, keepdims: bool, mean: bool) -> Tensor:
    t = as_tensor(t)
    if axis is None:
        axes = tuple(range(t.ndim))
    elif isinstance(axis, int):
        axes = (axis % t.ndim,)
    else:
        axes = tuple(ax % t.ndim for ax in axis)
    count = int(np.prod([t.shape[ax] for ax in axes], dtype=np.int64)) if axes else 1
    fn = np.mean if mean else np.sum
    data = fn(t.data, axis=axes, keepdims=keepdims)
    in_shape = t.shape

    def rule(g):
        gg = g
        if not keepdims:
            expand = list(g.shape)
            for ax in sorted(axes):
                expand.insert(ax, 1)
            gg = g.reshape(expand)
        gg = np.broadcast_to(gg, in_shape)
        if mean and count:
            gg = gg / count
        return (np.ascontiguousarray(gg),)

    return _record(np.asarray(data), (t,), rule)


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    shape = tuple(int(s) for s in (shape if isinstance(shape, Iterable) else (shape,)))
    in_shape = t.shape
    try:
        data = t.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {in_shape} to {shape}") from None

    def rule(g):
        return (g.reshape(in_shape),)

    return _record(data, (t,), rule)


def transpose(t: Tensor, axes) -> Tensor:
    t = as_tensor(t)
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"transpose axes {axes} are not a permutation for shape {t.shape}")
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record(np.ascontiguousarray(t.data.transpose(axes)), (t,), rule)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack needs at least one tensor")

    def rule(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(tensors)))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, rule)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    t = as_tensor(t)
    axis = axis % t.ndim
    if not (0 <= start <= stop <= t.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of shape {t.shape}")
    index = [slice(None)] * t.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    in_shape = t.shape

    def rule(g):
        out = np.zeros(in_shape)
        out[index] = g
        return (out,)

    return _record(np.ascontiguousarray(t.data[index]), (t,), rule)


def broadcast_to(t: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    t = as_tensor(t)
    shape = tuple(int(s) for s in shape)
    try:
        if np.broadcast_shapes(t.shape, shape) != shape:
            raise ValueError
    except ValueError:
        raise ShapeError(f"cannot broadcast {t.shape} to {shape}") from None
    in_shape = t.shape

    def rule(g):
        return (_reduce_to(g, in_shape),)

    return _record(np.ascontiguousarray(np.broadcast_to(t.data, shape)), (t,), rule)


# -- constant-mask helpers ------------------------------------------------


def _as_const_array(mask) -> np.ndarray:
    if isinstance(mask, Tensor):
        return mask.data
    return np.asarray(mask)


def masked_fill(t: Tensor, keep, value: float) -> Tensor:
    """Keep entries where ``keep`` is nonzero, set the rest to ``value``.

    ``keep`` is a constant 0/1 array broadcastable to ``t``; gradients
    flow only through kept entries.
    """
    t = as_tensor(t)
    keep = _as_const_array(keep) != 0
    if np.broadcast_shapes(keep.shape, t.shape) != t.shape:
        raise ShapeError(f"mask of shape {keep.shape} does not broadcast onto {t.shape}")

    def rule(g):
        return (np.where(keep, g, 0.0),)

    return _record(np.where(keep, t.data, value), (t,), rule)


def scale_by(t: Tensor, factor) -> Tensor:
    """Elementwise multiply by a constant array broadcastable to ``t``."""
    t = as_tensor(t)
    factor = np.asarray(_as_const_array(factor), dtype=np.float64)
    if np.broadcast_shapes(factor.shape, t.shape) != t.shape:
        raise ShapeError(f"factor of shape {factor.shape} does not broadcast onto {t.shape}")

    def rule(g):
        return (g * factor,)

    return _record(t.data * factor, (t,), rule)


def masked_select(t: Tensor, mask) -> Tensor:
    """Gather entries of ``t`` where the 0/1 ``mask`` is set, as a vector."""
    t = as_tensor(t)
    mask = _as_const_array(mask) != 0
    if mask.shape != t.shape:
        raise ShapeError(f"masked_select needs mask shape {t.shape}, got {mask.shape}")
    in_shape = t.shape

    def rule(g):
        out = np.zeros(in_shape)
        out[mask] = g
        return (out,)

    return _record(t.data[mask], (t,), rule)


# -- nonlinearities -------------------------------------------------------


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    positive = t.data > 0

    def rule(g):
        return (g * positive,)

    return _record(np.where(positive, t.data, 0.0), (t,), rule)


def tanh(t: Tensor) -> Tensor:
    t = as_tensor(t)
    y = np.tanh(t.data)

    def rule(g):
        return (g * (1.0 - y * y),)

    return _record(y, (t,), rule)


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    # Split by sign to avoid overflow in exp.
    d = t.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.clip(d, 0, None))),
                 np.exp(np.clip(d, None, 0)) / (1.0 + np.exp(np.clip(d, None, 0))))

    def rule(g):
        return (g * y * (1.0 - y),)

    return _record(y, (t,), rule)


def absolute(t: Tensor) -> Tensor:
    t = as_tensor(t)
    sign = np.sign(t.data)

    def rule(g):
        return (g * sign,)

    return _record(np.abs(t.data), (t,), rule)


# -- structured primitives -------------------------------------------------


def softmax_lastdim(t: Tensor) -> Tensor:
    """Softmax over the last axis with masking semantics.

    Entries equal to -inf (masked keys) map to exactly 0; a row that is
    entirely -inf maps to the all-zeros row. NaN or +inf input is a
    numeric error.
    """
    t = as_tensor(t)
    if t.ndim < 1 or t.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs a nonempty last axis, got shape {t.shape}")
    d = t.data
    if np.isnan(d).any():
        raise NumericError("softmax input contains NaN")
    if np.isposinf(d).any():
        raise NumericError("softmax input contains +inf")
    rowmax = np.max(d, axis=-1, keepdims=True)
    shift = np.where(np.isfinite(rowmax), rowmax, 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(d - shift)
    total = e.sum(axis=-1, keepdims=True)
    y = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def rule(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((g - inner) * y,)

    return _record(y, (t,), rule)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    t, gain, bias = as_tensor(t), as_tensor(gain), as_tensor(bias)
    if t.ndim < 1 or t.shape[-1] == 0:
        raise ShapeError(f"layer_norm needs a nonempty feature axis, got shape {t.shape}")
    width = t.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({width},), got {gain.shape} and {bias.shape}"
        )
    mu = t.data.mean(axis=-1, keepdims=True)
    centered = t.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    gd, bd = gain.data, bias.data

    def rule(g):
        dgain = (g * y).reshape(-1, width).sum(axis=0)
        dbias = g.reshape(-1, width).sum(axis=0)
        dy = g * gd
        dx = inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record(y * gd + bd, (t, gain, bias), rule)


def conv1d_time(t: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """1-D cross-correlation along the middle (time) axis.

    ``t`` has shape (N, T, c_in) and ``kernel`` (K, c_in, c_out).
    "same" zero-pads so the output keeps T steps; "valid" yields
    T - K + 1 steps.
    """
    t, kernel = as_tensor(t), as_tensor(kernel)
    if t.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d_time needs (N,T,c_in) and (K,c_in,c_out), got {t.shape} and {kernel.shape}")
    if t.shape[2] != kernel.shape[1]:
        raise ShapeError(f"conv1d_time channel mismatch: input {t.shape} vs kernel {kernel.shape}")
    if padding not in ("same", "valid"):
        raise ContractError(f"unknown padding mode {padding!r}")
    steps, width = t.shape[1], kernel.shape[0]
    if width > steps:
        raise ShapeError(f"kernel width {width} exceeds {steps} time steps")
    n, c_in = t.shape[0], t.shape[2]
    c_out = kernel.shape[2]
    pad_left = (width - 1) // 2 if padding == "same" else 0
    pad_right = (width - 1) - pad_left if padding == "same" else 0
    if padding == "same":
        padded = np.zeros((n, steps + width - 1, c_in))
        padded[:, pad_left:pad_left + steps, :] = t.data
    else:
        padded = t.data
    out_steps = padded.shape[1] - width + 1
    # im2col: contract (c_in, K) windows against the kernel as one matmul
    cols = sliding_window_view(padded, width, axis=1).reshape(n * out_steps, c_in * width)
    kmat = kernel.data.transpose(1, 0, 2).reshape(c_in * width, c_out)
    out = (cols @ kmat).reshape(n, out_steps, c_out)
    kd = kernel.data

    def rule(g):
        gflat = g.reshape(n * out_steps, c_out)
        dkernel = (cols.T @ gflat).reshape(c_in, width, c_out).transpose(1, 0, 2)
        gp = np.zeros((n, out_steps + 2 * (width - 1), c_out))
        gp[:, width - 1:width - 1 + out_steps, :] = g
        gcols = sliding_window_view(gp, width, axis=1).reshape(n * (out_steps + width - 1),
                                                               c_out * width)
        # full correlation with the flipped kernel recovers the input gradient
        kflip = kd[::-1].transpose(2, 0, 1).reshape(c_out * width, c_in)
        dpadded = (gcols @ kflip).reshape(n, out_steps + width - 1, c_in)
        dx = dpadded[:, pad_left:pad_left + steps, :] if padding == "same" else dpadded
        return np.ascontiguousarray(dx), dkernel

    return _record(out, (t, kernel), rule)


def scaled_dot(a: Tensor, b_t: Tensor, head_dim: int) -> Tensor:
    """Attention scores a @ b_t / sqrt(head_dim)."""
    return matmul(a, b_t) * (1.0 / math.sqrt(head_dim))
