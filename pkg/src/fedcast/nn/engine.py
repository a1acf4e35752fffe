"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and, when any input requires gradients, a closure
that scatters the output gradient back to its parents. backward() walks the
graph once in reverse topological order. Everything is float64; graphs are
built per call and garbage-collected afterwards, so no global state exists
and identical inputs produce bit-identical gradients.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # Never mutate in place: g may be shared with another node's gradient.
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def square(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * (y * (1.0 - y)))

    return _make(y, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def narrow(a, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice [start, start+size) along one axis."""
    a = _as_tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _make(a.data[index], (a,), backward)


def reshape(a, shape: Iterable[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    size = a.data.size

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g) / size))

    return _make(np.asarray(a.data.mean()), (a,), backward)


def spatial_mean(a) -> Tensor:
    """Global average pooling: (B, C, H, W) -> (B, C)."""
    a = _as_tensor(a)
    _, _, h, w = a.data.shape
    denom = h * w

    def backward(g):
        _accum(a, np.broadcast_to(g[:, :, None, None] / denom, a.data.shape).copy())

    return _make(a.data.mean(axis=(2, 3)), (a,), backward)


def conv2d(x, w, b, kernel: int, padding: int) -> Tensor:
    """Square-kernel 2-D convolution with stride 1.

    x: (B, C, H, W); w: (C * kernel^2, F) with rows ordered (c, ki, kj);
    b: (F,). Output (B, F, H', W') where H' = H + 2 padding - kernel + 1.
    Implemented as im2col + one GEMM per call.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    batch, channels, height, width = x.data.shape
    padded = np.pad(
        x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))
    )
    out_h = height + 2 * padding - kernel + 1
    out_w = width + 2 * padding - kernel + 1
    view = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), (2, 3))
    # view: (B, C, out_h, out_w, k, k) -> col: (B * out_h * out_w, C * k * k)
    col = (
        view.transpose(0, 2, 3, 1, 4, 5)
        .reshape(batch * out_h * out_w, channels * kernel * kernel)
        .copy()
    )
    out_mat = col @ w.data + b.data
    out = (
        out_mat.reshape(batch, out_h, out_w, -1).transpose(0, 3, 1, 2).copy()
    )

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, -1)
        _accum(w, col.T @ g_mat)
        _accum(b, g_mat.sum(axis=0))
        if x.requires_grad:
            g_col = g_mat @ w.data.T
            g_col = g_col.reshape(batch, out_h, out_w, channels, kernel, kernel)
            g_padded = np.zeros_like(padded)
            for ki in range(kernel):
                for kj in range(kernel):
                    g_padded[:, :, ki : ki + out_h, kj : kj + out_w] += (
                        g_col[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                    )
            if padding:
                g_x = g_padded[:, :, padding:-padding, padding:-padding]
            else:
                g_x = g_padded
            _accum(x, g_x.copy())

    return _make(out, (x, w, b), backward)
