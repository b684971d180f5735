"""Dense float64 tensors with a small reverse-mode tape.

Only the operations the DECN pipeline needs are provided.  A tensor that
was created by :meth:`Tape.leaf` (or derived from one) is *recorded*: every
operation applied to it appends a node to its tape.  Tensors without a tape
are plain values and nothing is recorded, which is how inference runs.

Non-differentiable decisions taken inside recorded operations (sign of
``abs``, argmax of ``amax``, clip activity, selection masks, permutations)
are stored on :attr:`Tape.gates`; the finite-difference harness compares
them to detect branch flips.

The subgradient of ``abs`` at exactly zero is 0, and so is the derivative
of ``sqrt`` at zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NumericError",
    "ShapeError",
    "KernelError",
    "UnknownLeafError",
    "Tensor",
    "Tape",
    "as_tensor",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "absolute",
    "sin",
    "cos",
    "exp",
    "sqrt",
    "sum",
    "mean",
    "amax",
    "prod",
    "reshape",
    "take",
    "concatenate",
    "where",
    "clip",
    "permute",
    "depthwise_conv2d",
    "center_embed",
    "symmetric_pad_index",
    "finite_diff_check",
    "finite_diff_report",
    "FiniteDiffReport",
]

MAX_RANK = 4


class NumericError(FloatingPointError):
    """A NaN or infinity appeared in a tensor."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class KernelError(ValueError):
    """A convolution kernel is malformed or too large for the grid."""


class UnknownLeafError(KeyError):
    """A tensor passed to :func:`grad` is not a leaf of the tape."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {what}")


class Tensor:
    """Immutable float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None,
                 _what: str = "tensor construction"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        _check_finite(arr, _what)
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node

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
    def recorded(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

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
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass
class _Node:
    parents: tuple[int | None, ...]
    backward: Callable[[np.ndarray], tuple] | None
    shape: tuple[int, ...]


class Tape:
    """Append-only record of operations; one per gradient computation."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gates: list[tuple[str, np.ndarray]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value) -> Tensor:
        """Register ``value`` as a trainable leaf and return its tensor."""
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data, _what="leaf")
        self.nodes.append(_Node((), None, t.shape))
        t.tape = self
        t.node = len(self.nodes) - 1
        return t

    def is_leaf(self, t: Tensor) -> bool:
        return (t.tape is self and t.node is not None
                and self.nodes[t.node].backward is None)

    def gate(self, name: str, decision) -> None:
        self.gates.append((name, np.array(decision, copy=True)))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(data: np.ndarray, inputs: Sequence[Tensor], backward, what: str) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands are recorded on different tapes")
            tape = t.tape
    out = Tensor(data, _what=what)
    if tape is None:
        return out
    parents = tuple(t.node if t.tape is tape else None for t in inputs)
    tape.nodes.append(_Node(parents, backward, out.shape))
    out.tape = tape
    out.node = len(tape.nodes) - 1
    return out


def _gate(inputs: Sequence[Tensor], name: str, decision) -> None:
    for t in inputs:
        if t.tape is not None:
            t.tape.gate(name, decision)
            return


def grad(output: Tensor, params: Sequence[Tensor], tape: Tape | None = None) -> list[np.ndarray]:
    """Gradients of a single-element ``output`` with respect to leaf ``params``.

    Leaves that the output does not depend on get zero gradients.
    """
    tape = output.tape if tape is None else tape
    if output.size != 1:
        raise ShapeError(f"grad needs a single-element output, got shape {output.shape}")
    for p in params:
        if tape is None or not tape.is_leaf(p):
            raise UnknownLeafError(f"{p!r} is not a leaf of this tape")
    if output.tape is not tape or output.node is None:
        return [np.zeros(p.shape) for p in params]

    adj: dict[int, np.ndarray] = {output.node: np.ones(output.shape)}
    leaf_adj: dict[int, np.ndarray] = {}
    for idx in range(output.node, -1, -1):
        g = adj.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.backward is None:
            leaf_adj[idx] = g
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent is None or pg is None:
                continue
            if parent in adj:
                adj[parent] = adj[parent] + pg
            else:
                adj[parent] = pg
    return [np.array(leaf_adj.get(p.node, np.zeros(p.shape)), dtype=np.float64)
            .reshape(p.shape) for p in params]


# ---------------------------------------------------------------- elementwise

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    sa, sb = a.shape, b.shape
    return _apply(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    sa, sb = a.shape, b.shape
    return _apply(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    ad, bd = a.data, b.data
    return _apply(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                  "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _apply(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * ad / (bd * bd), bd.shape)),
                  "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _apply(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    _gate((a,), "abs", sign)
    return _apply(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _apply(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _apply(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _apply(out, (a,), lambda g: (g * out,), "exp")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _apply(out, (a,), backward, "sqrt")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _apply(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return div(sum(a, axis=axes, keepdims=keepdims), float(count))


def amax(a, axis: int = -1) -> Tensor:
    """Maximum along one axis; the gradient goes to the first argmax."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    _gate((a,), "amax", idx)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _apply(np.take_along_axis(a.data, idx, axis=axis).squeeze(axis), (a,),
                  backward, "amax")


def prod(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    ad = a.data

    def backward(g):
        # product of all other entries, without dividing by possibly-zero values
        moved = np.moveaxis(ad, axis, -1)
        ones = np.ones(moved.shape[:-1] + (1,))
        left = np.cumprod(np.concatenate([ones, moved[..., :-1]], axis=-1), axis=-1)
        right = np.cumprod(np.concatenate([ones, moved[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
        others = np.moveaxis(left * right, -1, axis)
        return (np.expand_dims(g, axis) * others,)

    return _apply(np.prod(ad, axis=axis), (a,), backward, "prod")


# ---------------------------------------------------------------- structural

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _apply(out, (a,), lambda g: (g.reshape(old),), "reshape")


def take(a, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _apply(a.data[index], (a,), backward, "take")


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _apply(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concatenate")


def where(mask, a, b) -> Tensor:
    """``mask ? a : b`` with a constant mask (no gradient flows into it)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    shape = _binary_shape(a, b)
    try:
        np.broadcast_shapes(mask.shape, shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {mask.shape} does not fit {shape}") from exc
    _gate((a, b), "where", mask)
    sa, sb = a.shape, b.shape
    return _apply(np.where(mask, a.data, b.data), (a, b),
                  lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa),
                             _unbroadcast(np.where(mask, 0.0, g), sb)),
                  "where")


def clip(a, lower, upper) -> Tensor:
    """Clamp into ``[lower, upper]``; clamped entries pass no gradient."""
    a = as_tensor(a)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    inside = (a.data >= lower) & (a.data <= upper)
    _gate((a,), "clip", inside)
    return _apply(np.clip(a.data, lower, upper), (a,),
                  lambda g: (np.where(inside, g, 0.0),), "clip")


def permute(a, perm, axis: int) -> Tensor:
    """Reorder ``a`` along ``axis`` with ``perm`` (one permutation per slice).

    ``perm`` must broadcast to ``a.shape`` as :func:`numpy.take_along_axis`
    indices do.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    perm = np.asarray(perm, dtype=np.intp)
    _gate((a,), "permute", perm)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.broadcast_to(perm, g.shape), g, axis=axis)
        return (out,)

    return _apply(np.take_along_axis(a.data, perm, axis=axis), (a,), backward, "permute")


# ---------------------------------------------------------------- convolution

def symmetric_pad_index(n: int, pad: int) -> np.ndarray:
    """Source index for every position of a symmetrically padded axis.

    Position ``-1`` maps to ``0``, ``-2`` to ``1`` and so on (edge duplicated).
    """
    if pad > n:
        raise KernelError(f"padding {pad} exceeds axis length {n}")
    base = np.arange(n)
    return np.concatenate([base[:pad][::-1], base, base[n - pad:][::-1]])


def _check_kernel(kshape: tuple[int, ...], side: int) -> int:
    if len(kshape) != 2 or kshape[0] != kshape[1]:
        raise KernelError(f"kernel must be square, got shape {kshape}")
    k = kshape[0]
    if k % 2 == 0:
        raise KernelError(f"kernel size must be odd, got {k}")
    if k > 2 * side - 1:
        raise KernelError(f"kernel size {k} overflows symmetric padding of a {side}x{side} grid")
    return k


def depthwise_conv2d(x, kernel) -> Tensor:
    """Correlate every channel of ``x`` with the same ``kernel``.

    ``x`` has shape ``(..., L, L, C)`` (spatial axes are -3 and -2). Borders
    are extended by symmetric padding so the output keeps the input extent::

        out[i, j, c] = sum_{a, b} kernel[a, b] * padded[i + a, j + b, c]
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim < 3:
        raise ShapeError(f"conv input needs shape (..., L, L, C), got {x.shape}")
    rows, cols = x.shape[-3], x.shape[-2]
    if rows != cols:
        raise ShapeError(f"conv input must be square in space, got {rows}x{cols}")
    k = _check_kernel(kernel.shape, rows)
    pad = k // 2
    idx = symmetric_pad_index(rows, pad)
    padded = x.data[..., idx, :, :][..., :, idx, :]
    fold = np.zeros((idx.size, rows))
    fold[np.arange(idx.size), idx] = 1.0
    kd = kernel.data
    out = np.zeros(x.shape)
    for a in range(k):
        for b in range(k):
            out += kd[a, b] * padded[..., a:a + rows, b:b + rows, :]

    def backward(g):
        gk = np.empty((k, k))
        gpad = np.zeros(padded.shape)
        for a in range(k):
            for b in range(k):
                window = padded[..., a:a + rows, b:b + rows, :]
                gk[a, b] = np.vdot(window.reshape(-1), g.reshape(-1))
                gpad[..., a:a + rows, b:b + rows, :] += kd[a, b] * g
        # fold the padded gradient back onto the source cells
        tmp = np.einsum("ri,...rsc->...isc", fold, gpad)
        gx = np.einsum("sj,...isc->...ijc", fold, tmp)
        return gx, gk

    return _apply(out, (x, kernel), backward, "depthwise_conv2d")


def center_embed(kernel, size: int) -> Tensor:
    """Zero-pad a square odd kernel to ``size x size``, keeping it centred."""
    kernel = as_tensor(kernel)
    k = kernel.shape[0]
    if size < k or (size - k) % 2:
        raise KernelError(f"cannot centre a {k}x{k} kernel in {size}x{size}")
    off = (size - k) // 2
    out = np.zeros((size, size))
    out[off:off + k, off:off + k] = kernel.data
    return _apply(out, (kernel,), lambda g: (g[off:off + k, off:off + k],), "center_embed")


# ---------------------------------------------------------------- checking

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    gate_flips: int
    n_checked: int


def _gate_signature(tape: Tape) -> list[tuple[str, np.ndarray]]:
    return tape.gates


def _same_gates(a, b) -> bool:
    if len(a) != len(b):
        return False
    return all(na == nb and ga.shape == gb.shape and np.array_equal(ga, gb)
               for (na, ga), (nb, gb) in zip(a, b))


def finite_diff_report(program: Callable[..., Tensor], params: Sequence, h: float = 1e-5) -> FiniteDiffReport:
    """Compare tape gradients of ``program(*params)`` with central differences.

    ``gate_flips`` counts perturbations that changed any recorded branch
    decision (abs sign, argmax, clip activity, mask, permutation); such
    probes are still included in ``max_rel_error``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.leaf(p) for p in base]
    out = program(*leaves)
    analytic = grad(out, leaves, tape)
    reference_gates = _gate_signature(tape)

    def run(values):
        t = Tape()
        result = program(*[t.leaf(v) for v in values])
        return result.item(), t.gates

    worst, flips, count = 0.0, 0, 0
    for which, p in enumerate(base):
        for flat in range(p.size):
            values = [q.copy() for q in base]
            values[which].reshape(-1)[flat] += h
            f_plus, g_plus = run(values)
            values[which].reshape(-1)[flat] -= 2 * h
            f_minus, g_minus = run(values)
            numeric = (f_plus - f_minus) / (2 * h)
            ad = analytic[which].reshape(-1)[flat]
            err = abs(ad - numeric) / max(abs(ad), 1e-8)
            worst = max(worst, err)
            count += 1
            if not (_same_gates(g_plus, reference_gates) and _same_gates(g_minus, reference_gates)):
                flips += 1
    return FiniteDiffReport(float(worst), flips, count)


def finite_diff_check(program: Callable[..., Tensor], params: Sequence, h: float = 1e-5) -> float:
    """Maximum relative error between tape and central-difference gradients."""
    return finite_diff_report(program, params, h).max_rel_error
