"""Dense tensors with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a row-major numpy buffer. Operations executed while a
``ComputationRecord`` is active are appended to that record; a single
reverse sweep over the record (``record.backward(loss)``) fills ``.grad``
on every tensor that requires gradients and is reachable from the loss.

Tensors are value-semantic and safe to share between threads; the active
record is thread-local, so each training step's tape is confined to the
thread that built it.

Broadcasting in binary ops is deliberately narrow: operands must have
identical shapes, or the lower-rank operand must match the trailing axes
of the other exactly (a pure leading-batch broadcast). Anything else must
go through an explicit :func:`expand`.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import einops
import numpy as np

from .exceptions import ContractError, DimensionError, ParameterError

DEFAULT_DTYPE = np.float32

_STATE = threading.local()


def _active_record() -> Optional["ComputationRecord"]:
    return getattr(_STATE, "record", None)


class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ParameterError("tensor division supports scalar divisors only")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


class ComputationRecord:
    """Ordered tape of executed operations for one reverse sweep.

    Use as a context manager around the forward computation; call
    :meth:`backward` with the scalar loss afterwards (inside or outside
    the ``with`` block). The reverse sweep visits operations in exact
    reverse execution order and accumulates gradients on every tensor
    that requires them.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev: Optional[ComputationRecord] = None

    def __enter__(self) -> "ComputationRecord":
        self._prev = _active_record()
        _STATE.record = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STATE.record = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, backward_fn in reversed(self._entries):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, ig in zip(inputs, backward_fn(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                    holders[key] = inp
        for key, holder in holders.items():
            holder.grad = np.asarray(grads[key], dtype=holder.data.dtype)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _emit(
    out_data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    record = _active_record()
    if record is not None and requires:
        record._entries.append((out, inputs, backward_fn))
    return out


def _check_binary(a: Tensor, b: Tensor) -> None:
    """Permit equal shapes, scalars, and pure leading-axis broadcast."""
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    small, large = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) != len(large) and large[len(large) - len(small):] == small:
        return
    raise DimensionError(
        f"shapes {sa} and {sb} are not combinable; use expand() for "
        "anything beyond a leading-batch broadcast"
    )


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the leading axes that were broadcast away."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra)))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _emit(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)
    out = a.data - b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _emit(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(
            f"matmul batch dimensions disagree: {a.shape} x {b.shape}"
        ) from exc
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _reduce_to(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-shifted)."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ParameterError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _emit(y, (x,), backward)


def layer_norm(
    x: Tensor,
    gain: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    axis: int = -1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize to zero mean / unit variance along one axis.

    ``gain`` and ``bias`` are 1-D of length ``x.shape[axis]`` and are only
    supported for ``axis=-1``; pass ``None`` for a pure normalization.
    """
    x = _as_tensor(x)
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if not -x.ndim <= axis < x.ndim:
        raise ParameterError(f"layer_norm axis {axis} invalid for shape {x.shape}")
    if (gain is not None or bias is not None) and axis not in (-1, x.ndim - 1):
        raise ParameterError("gain/bias are only supported for axis=-1")
    n = x.shape[axis]
    mean = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data

    inputs = [x]
    if gain is not None:
        inputs.append(gain)
    if bias is not None:
        inputs.append(bias)

    def backward(g):
        dxhat = g * gain.data if gain is not None else g
        gx = None
        if x.requires_grad:
            m1 = dxhat.mean(axis=axis, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        grads = [gx]
        if gain is not None:
            red = tuple(range(g.ndim - 1))
            grads.append((g * xhat).sum(axis=red) if gain.requires_grad else None)
        if bias is not None:
            red = tuple(range(g.ndim - 1))
            grads.append(g.sum(axis=red) if bias.requires_grad else None)
        return tuple(grads)

    del n
    return _emit(out, tuple(inputs), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU activation, tanh approximation."""
    x = _as_tensor(x)
    inner = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * dinner
        return (g * dx,)

    return _emit(out, (x,), backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=False),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape),)

    return _emit(out, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    orig = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast to ``shape``; gradient sums the expanded axes."""
    x = _as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot expand {x.shape} to {shape}") from exc

    def backward(g):
        extra = len(shape) - x.ndim
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        mark = tuple(i for i, d in enumerate(x.shape) if d == 1 and g.shape[i] != 1)
        if mark:
            g = g.sum(axis=mark, keepdims=True)
        return (g,)

    return _emit(np.ascontiguousarray(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise DimensionError(
                f"concat rank mismatch: {tensors[0].shape} vs {t.shape}"
            )
        if base[:axis] + base[axis + 1:] != other[:axis] + other[axis + 1:]:
            raise DimensionError(
                f"concat shapes differ off-axis: {tensors[0].shape} vs {t.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tuple(tensors), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    if not (0 <= start <= stop <= x.shape[axis]):
        raise DimensionError(
            f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}"
        )
    index = tuple(
        slice(start, stop) if i == axis else slice(None) for i in range(x.ndim)
    )
    out = x.data[index]

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _emit(np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------------------
# rearrange: einops-style split/merge/permute of named axes
# ---------------------------------------------------------------------------

def _parse_side(side: str) -> list[list[str]]:
    groups: list[list[str]] = []
    token = ""
    group: Optional[list[str]] = None

    def flush():
        nonlocal token
        if token:
            if group is None:
                groups.append([token])
            else:
                group.append(token)
            token = ""

    for ch in side.strip() + " ":
        if ch == "(":
            if group is not None:
                raise ParameterError(f"nested group in pattern side {side!r}")
            group = []
        elif ch in (" ", ")"):
            flush()
            if ch == ")":
                if group is None:
                    raise ParameterError(f"unbalanced ')' in pattern side {side!r}")
                groups.append(group)
                group = None
        else:
            token += ch
    if group is not None:
        raise ParameterError(f"unbalanced '(' in pattern side {side!r}")
    return groups


def _split_pattern(pattern: str) -> tuple[str, str]:
    if "->" not in pattern:
        raise ParameterError(f"pattern {pattern!r} lacks '->'")
    lhs, rhs = pattern.split("->")
    return lhs.strip(), rhs.strip()


def invert_pattern(pattern: str) -> str:
    """Swap the two sides of a rearrange pattern."""
    lhs, rhs = _split_pattern(pattern)
    return f"{rhs} -> {lhs}"


def _resolve_sizes(
    groups: list[list[str]], shape: tuple[int, ...], known: dict[str, int]
) -> dict[str, int]:
    sizes = dict(known)
    if len(groups) != len(shape):
        raise DimensionError(
            f"pattern expects rank {len(groups)}, tensor has shape {shape}"
        )
    for group, dim in zip(groups, shape):
        unknown = [a for a in group if a not in sizes]
        prod = 1
        for a in group:
            if a in sizes:
                prod *= sizes[a]
        if not unknown:
            if prod != dim:
                raise DimensionError(
                    f"axes {group} imply size {prod}, tensor axis is {dim}"
                )
        elif len(unknown) == 1:
            if prod == 0 or dim % prod:
                raise DimensionError(
                    f"axis of size {dim} not divisible by factor {prod} "
                    f"for group {group}"
                )
            sizes[unknown[0]] = dim // prod
        else:
            raise DimensionError(
                f"cannot infer sizes of {unknown} in group {group}; "
                "pass them as keyword sizes"
            )
    return sizes


def rearrange(x: Tensor, pattern: str, **sizes: int) -> Tensor:
    """Bijective relabeling of element coordinates (split/merge/permute).

    The gradient (and the public inverse) is the same movement run through
    :func:`invert_pattern` with the sizes resolved at forward time.
    """
    x = _as_tensor(x)
    lhs, rhs = _split_pattern(pattern)
    resolved = _resolve_sizes(_parse_side(lhs), x.shape, sizes)
    lhs_names = sorted(a for g in _parse_side(lhs) for a in g)
    rhs_names = sorted(a for g in _parse_side(rhs) for a in g)
    if lhs_names != rhs_names:
        raise ParameterError(
            f"pattern {pattern!r} must use the same axes on both sides"
        )
    try:
        out = einops.rearrange(x.data, pattern, **resolved)
    except einops.EinopsError as exc:
        raise DimensionError(f"rearrange {pattern!r} on {x.shape}: {exc}") from exc
    inverse = invert_pattern(pattern)

    def backward(g):
        return (einops.rearrange(g, inverse, **resolved),)

    return _emit(np.ascontiguousarray(out), (x,), backward)


def backward(loss: Tensor, record: ComputationRecord) -> None:
    """Run the reverse sweep of ``record`` seeded at the scalar ``loss``."""
    record.backward(loss)
