"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the obfuscation networks need are provided: 3x3
convolutions (stride 1 or 2, zero padding 1), nearest 2x upsampling, leaky
ReLU, clamping, dense layers and mean-squared error.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..core import ShapeMismatch

# branch masks of piecewise-linear ops, collected only inside record_branches()
_branch_log: Optional[list[np.ndarray]] = None


@contextmanager
def record_branches() -> Iterator[list[np.ndarray]]:
    """Collect which linear piece every leaky-ReLU and clamp element took.

    Two forward passes with equal logs evaluated the same smooth function, so
    a finite difference between them is free of kink crossings.
    """
    global _branch_log
    prev, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Populate ``.grad`` on every tensor in the graph that requires it."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # free intermediate buffers, keep leaf gradients
        for node in order:
            if node._parents and node is not self:
                node.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accumulate(g * c)

    return _node(a.data * c, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    mask = np.where(a.data > 0, 1.0, slope)
    if _branch_log is not None:
        _branch_log.append(a.data > 0)

    def backward(g):
        a._accumulate(g * mask)

    return _node(a.data * mask, (a,), backward)


def clamp(a: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    inside = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    if _branch_log is not None:
        _branch_log.append(np.sign(a.data - lo) + np.sign(a.data - hi))

    def backward(g):
        a._accumulate(g * inside)

    return _node(np.clip(a.data, lo, hi), (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w.T + b`` for x of shape (N, in) and w of shape (out, in)."""

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _node(x.data @ w.data.T + b.data, (x, w, b), backward)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape_p, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = shape_p[:2]
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros(shape_p)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Zero-padded ('same' for stride 1) convolution; x is NCHW, w is (O, C, k, k)."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo)
    wm = w.data.reshape(o, -1)
    out = (wm @ cols).reshape(n, o, ho, wo) + b.data[None, :, None, None]

    def backward(g):
        gm = g.reshape(n, o, ho * wo)
        if w.requires_grad:
            w._accumulate(np.einsum("nol,nkl->ok", gm, cols).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = wm.T @ gm
            gxp = _col2im(gcols, xp.shape, k, stride, ho, wo)
            x._accumulate(gxp[:, :, pad:pad + h, pad:pad + wd])

    return _node(out, (x, w, b), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 in both spatial dimensions."""
    n, c, h, w = x.shape

    def backward(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _node(x.data.repeat(2, axis=2).repeat(2, axis=3), (x,), backward)


def mse(a, b) -> Tensor:
    """Mean of squared differences over all elements."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * diff / n)
        if b.requires_grad:
            b._accumulate(-g * 2.0 * diff / n)

    return _node(np.array(np.mean(diff * diff)), (a, b), backward)
