"""Reverse-mode automatic differentiation on numpy arrays.

A small tape-based engine sized for the networks in this package: recurrent
Q-networks, state-conditioned mixers and single-block attention decoders.
Each primitive records exactly one node on an explicit :class:`Tape`;
``Tape.backward`` replays the nodes once in reverse creation order, so a
tape built from K primitives runs exactly K backward closures.

Passing ``tape=None`` to any primitive runs it as a plain numpy forward
computation (used for target networks, greedy acting and rollouts, where
gradients are never needed).

All arithmetic is float64.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "const",
    "add",
    "add_const",
    "sub",
    "mul",
    "affine_const",
    "linear",
    "matmul",
    "bmm",
    "transpose_last",
    "relu",
    "elu",
    "tanh",
    "sigmoid",
    "abs_",
    "square",
    "softmax_last",
    "sum_last",
    "sum_all",
    "mean_all",
    "concat_last",
    "slice_last",
    "gather_last",
    "stack_first",
    "reshape",
    "mse",
]


class Tensor:
    """A float64 array plus a gradient buffer filled in by backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None


class _Node:
    __slots__ = ("out", "fn")

    def __init__(self, out, fn):
        self.out = out
        self.fn = fn


class Tape:
    """Ordered record of primitive ops, replayed once by backward."""

    __slots__ = ("nodes", "visited")

    def __init__(self):
        self.nodes = []
        self.visited = 0

    @property
    def node_count(self):
        return len(self.nodes)

    def add_node(self, out, fn):
        self.nodes.append(_Node(out, fn))

    def backward(self, root: Tensor):
        """Accumulate d(root)/d(input) into .grad of every tensor on the tape.

        Returns the number of nodes whose closure actually ran; with a fully
        connected tape this equals ``node_count``.
        """
        if root.data.size != 1:
            raise ValueError("backward root must be a scalar")
        root.grad = np.ones_like(root.data)
        ran = 0
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.fn(g)
            ran += 1
        self.visited = ran
        return ran


def _acc(t: Tensor, g):
    # Copy on first touch: g may alias another tensor's grad buffer.
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def _acc_own(t: Tensor, g):
    # The caller guarantees g is freshly allocated.
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Reduce gradient g to the given (broadcast-source) shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def const(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(tape, a: Tensor, b: Tensor):
    out = Tensor(a.data + b.data)
    if tape is not None:
        def fn(g, a=a, b=b):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc(b, _unbroadcast(g, b.data.shape))
        tape.add_node(out, fn)
    return out


def add_const(tape, a: Tensor, c):
    out = Tensor(a.data + c)
    if tape is not None:
        def fn(g, a=a):
            _acc(a, _unbroadcast(g, a.data.shape))
        tape.add_node(out, fn)
    return out


def sub(tape, a: Tensor, b: Tensor):
    out = Tensor(a.data - b.data)
    if tape is not None:
        def fn(g, a=a, b=b):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc_own(b, _unbroadcast(-g, b.data.shape))
        tape.add_node(out, fn)
    return out


def mul(tape, a: Tensor, b: Tensor):
    out = Tensor(a.data * b.data)
    if tape is not None:
        def fn(g, a=a, b=b):
            _acc_own(a, _unbroadcast(g * b.data, a.data.shape))
            _acc_own(b, _unbroadcast(g * a.data, b.data.shape))
        tape.add_node(out, fn)
    return out


def affine_const(tape, x: Tensor, scale: float, shift: float = 0.0):
    """Elementwise scale*x + shift with python-scalar coefficients."""
    out = Tensor(x.data * scale + shift)
    if tape is not None:
        def fn(g, x=x, scale=scale):
            _acc_own(x, g * scale)
        tape.add_node(out, fn)
    return out


def linear(tape, x: Tensor, w: Tensor, b: Tensor | None = None):
    """x @ w (+ b) over arbitrary leading dims; x: (..., i), w: (i, o)."""
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    out = Tensor(y)
    if tape is not None:
        def fn(g, x=x, w=w, b=b):
            _acc_own(x, g @ w.data.T)
            x2 = x.data.reshape(-1, x.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            _acc_own(w, x2.T @ g2)
            if b is not None:
                _acc_own(b, g2.sum(axis=0))
        tape.add_node(out, fn)
    return out


def matmul(tape, a: Tensor, b: Tensor):
    """Plain 2-D matrix product a (m, k) @ b (k, n)."""
    out = Tensor(a.data @ b.data)
    if tape is not None:
        def fn(g, a=a, b=b):
            _acc_own(a, g @ b.data.T)
            _acc_own(b, a.data.T @ g)
        tape.add_node(out, fn)
    return out


def bmm(tape, a: Tensor, b: Tensor):
    """Batched matmul; a: (..., m, k), b: (..., k, n) with equal batch dims."""
    out = Tensor(a.data @ b.data)
    if tape is not None:
        def fn(g, a=a, b=b):
            _acc_own(a, g @ np.swapaxes(b.data, -1, -2))
            _acc_own(b, np.swapaxes(a.data, -1, -2) @ g)
        tape.add_node(out, fn)
    return out


def transpose_last(tape, a: Tensor):
    out = Tensor(np.swapaxes(a.data, -1, -2))
    if tape is not None:
        def fn(g, a=a):
            _acc(a, np.swapaxes(g, -1, -2))
        tape.add_node(out, fn)
    return out


def relu(tape, x: Tensor):
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        def fn(g, x=x):
            _acc_own(x, g * (x.data > 0.0))
        tape.add_node(out, fn)
    return out


def elu(tape, x: Tensor):
    neg = x.data < 0.0
    y = np.where(neg, np.expm1(np.minimum(x.data, 0.0)), x.data)
    out = Tensor(y)
    if tape is not None:
        def fn(g, x=x, y=y, neg=neg):
            _acc_own(x, g * np.where(neg, y + 1.0, 1.0))
        tape.add_node(out, fn)
    return out


def tanh(tape, x: Tensor):
    y = np.tanh(x.data)
    out = Tensor(y)
    if tape is not None:
        def fn(g, x=x, y=y):
            _acc_own(x, g * (1.0 - y * y))
        tape.add_node(out, fn)
    return out


def sigmoid(tape, x: Tensor):
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)
    if tape is not None:
        def fn(g, x=x, y=y):
            _acc_own(x, g * y * (1.0 - y))
        tape.add_node(out, fn)
    return out


def abs_(tape, x: Tensor):
    out = Tensor(np.abs(x.data))
    if tape is not None:
        def fn(g, x=x):
            _acc_own(x, g * np.sign(x.data))
        tape.add_node(out, fn)
    return out


def square(tape, x: Tensor):
    out = Tensor(x.data * x.data)
    if tape is not None:
        def fn(g, x=x):
            _acc_own(x, g * (2.0 * x.data))
        tape.add_node(out, fn)
    return out


def softmax_last(tape, x: Tensor):
    """Numerically stable softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    if tape is not None:
        def fn(g, x=x, y=y):
            dot = (g * y).sum(axis=-1, keepdims=True)
            _acc_own(x, y * (g - dot))
        tape.add_node(out, fn)
    return out


def sum_last(tape, x: Tensor):
    """Sum over the last axis."""
    out = Tensor(x.data.sum(axis=-1))
    if tape is not None:
        def fn(g, x=x):
            _acc_own(x, np.repeat(g[..., None], x.data.shape[-1], axis=-1))
        tape.add_node(out, fn)
    return out


def sum_all(tape, x: Tensor):
    out = Tensor(np.asarray(x.data.sum()))
    if tape is not None:
        def fn(g, x=x):
            _acc_own(x, np.full_like(x.data, float(g)))
        tape.add_node(out, fn)
    return out


def mean_all(tape, x: Tensor):
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()))
    if tape is not None:
        def fn(g, x=x, n=n):
            _acc_own(x, np.full_like(x.data, float(g) / n))
        tape.add_node(out, fn)
    return out


def concat_last(tape, parts):
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    if tape is not None:
        sizes = [p.data.shape[-1] for p in parts]
        def fn(g, parts=parts, sizes=sizes):
            off = 0
            for p, w in zip(parts, sizes):
                _acc(p, g[..., off:off + w])
                off += w
        tape.add_node(out, fn)
    return out


def slice_last(tape, x: Tensor, start: int, stop: int):
    out = Tensor(x.data[..., start:stop].copy())
    if tape is not None:
        def fn(g, x=x, start=start, stop=stop):
            full = np.zeros_like(x.data)
            full[..., start:stop] = g
            _acc_own(x, full)
        tape.add_node(out, fn)
    return out


def gather_last(tape, x: Tensor, idx):
    """Pick one entry per row along the last axis; idx shape = x shape[:-1]."""
    idx = np.asarray(idx)
    out = Tensor(np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0])
    if tape is not None:
        def fn(g, x=x, idx=idx):
            full = np.zeros_like(x.data)
            k = x.data.shape[-1]
            flat = full.reshape(-1, k)
            flat[np.arange(flat.shape[0]), idx.ravel()] = g.ravel()
            _acc_own(x, full)
        tape.add_node(out, fn)
    return out


def stack_first(tape, parts):
    out = Tensor(np.stack([p.data for p in parts], axis=0))
    if tape is not None:
        def fn(g, parts=parts):
            for i, p in enumerate(parts):
                _acc(p, g[i])
        tape.add_node(out, fn)
    return out


def reshape(tape, x: Tensor, shape):
    out = Tensor(x.data.reshape(shape))
    if tape is not None:
        def fn(g, x=x):
            _acc(x, g.reshape(x.data.shape))
        tape.add_node(out, fn)
    return out


def mse(tape, pred: Tensor, target: Tensor):
    """Mean squared error; three primitives (sub, square, mean)."""
    return mean_all(tape, square(tape, sub(tape, pred, target)))
