"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive op records a graph node on its output: the node holds the
input tensors and a closure mapping the output gradient to per-input
gradients.  ``backward`` on a scalar walks the recorded nodes in reverse
topological order and accumulates gradients onto every tensor that
requires them.  Tensors created inside a ``no_grad()`` block carry no
node and are treated as constants.

Broadcasting for elementwise ops is deliberately narrow: equal shapes,
scalar against anything, or one shape being a trailing suffix of the
other (the leading-batch case, e.g. (D,) added to (B, T, D)).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; message carries both shapes."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs, backward_fn):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """A float64 ndarray plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return subtract(self, _wrap(other))

    def __rsub__(self, other):
        return subtract(_wrap(other), self)

    def __mul__(self, other):
        return multiply(self, _wrap(other))

    def __rmul__(self, other):
        return multiply(_wrap(other), self)

    def __truediv__(self, other):
        return divide(self, _wrap(other))

    def __rtruediv__(self, other):
        return divide(_wrap(other), self)

    def __neg__(self):
        return multiply(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    # -- method sugar --------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(tuple(inputs), backward_fn)
    return out


# ---------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar (0-d) tensor.  Gradients accumulate: callers
    that reuse parameters across steps zero them between calls.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))

    loss.grad = np.ones((), dtype=np.float64) if loss.grad is None else loss.grad + 1.0
    for t in reversed(topo):
        if t.node is None or t.grad is None:
            continue
        for inp, g in zip(t.node.inputs, t.node.backward_fn(t.grad)):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match tensor shape {inp.data.shape}"
                )
            if inp.grad is None:
                # broadcast views are read-only; own the buffer before storing
                inp.grad = g if (g.base is None and g.flags.writeable) else g.copy()
            else:
                inp.grad = inp.grad + g


# ---------------------------------------------------------------------
# broadcasting helpers (scalar / suffix only)
# ---------------------------------------------------------------------

def _check_elementwise(sa: tuple, sb: tuple) -> None:
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sb) >= len(sa) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeError(
        f"elementwise op needs equal, scalar, or suffix-broadcast shapes, got {sa} and {sb}"
    )


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape`` (leading axes only)."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    extra = grad.ndim - len(shape)
    g = grad.sum(axis=tuple(range(extra))) if extra > 0 else grad
    if g.shape != shape:
        raise ShapeError(f"cannot reduce gradient of shape {grad.shape} to {shape}")
    return g


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a.shape, b.shape)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a.shape, b.shape)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)),
    )


def divide(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_reduce_to(g / bd, a.shape), _reduce_to(-g * ad / (bd * bd), b.shape)),
    )


# ---------------------------------------------------------------------
# transcendental / activation
# ---------------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0.0
    return _make(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs tensors of rank >= 2, got {sa} and {sb}")
    if sa[-1] != sb[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {sa} and {sb}")
    if a.ndim > 2 and b.ndim > 2 and sa[:-2] != sb[:-2]:
        raise ShapeError(f"matmul leading (batch) dimensions differ: {sa} and {sb}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _reduce_to(np.matmul(g, bd.swapaxes(-1, -2)), sa)
        gb = _reduce_to(np.matmul(ad.swapaxes(-1, -2), g), sb)
        return ga, gb

    return _make(np.matmul(ad, bd), (a, b), back)


# ---------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must match exactly."""
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim if ndim else 0
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            i != axis and t.shape[i] != tensors[0].shape[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat shapes incompatible on axis {axis}: "
                f"{[t.shape for t in tensors]}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"cannot reshape {orig} to {shape}") from err
    return _make(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(np.float64, copy=False),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        count = int(np.prod([shape[a] for a in axis]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(np.float64, copy=False) / count,)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), back)


# ---------------------------------------------------------------------
# softmax family / normalization
# ---------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (numerically stabilized)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    """log(softmax(x)) over the last axis without intermediate underflow."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), back)


LN_EPS = 1e-12


def layer_norm(x: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        d = x.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        del d
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), back)


# ---------------------------------------------------------------------
# masking / gather
# ---------------------------------------------------------------------

MASK_FILL = -1e30


def masked_fill(x: Tensor, allowed: np.ndarray, fill: float = MASK_FILL) -> Tensor:
    """Replace entries where ``allowed`` is False with ``fill`` (pre-softmax mask).

    ``allowed`` is a constant boolean array broadcastable to ``x.shape``;
    gradients flow only through allowed positions.
    """
    try:
        keep = np.broadcast_to(np.asarray(allowed, dtype=bool), x.shape)
    except ValueError as err:
        raise ShapeError(
            f"mask of shape {np.shape(allowed)} does not broadcast to {x.shape}"
        ) from err
    return _make(np.where(keep, x.data, fill), (x,), lambda g: (g * keep,))


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of a (V, D) table at integer ``ids`` (any shape)."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-d table, got {table.shape}")
    if idx.size > 0 and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"gather ids out of range [0, {table.shape[0]}): min={idx.min()}, max={idx.max()}"
        )
    tshape = table.shape

    def back(g):
        acc = np.zeros(tshape, dtype=np.float64)
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, tshape[1]))
        return (acc,)

    return _make(table.data[idx], (table,), back)
