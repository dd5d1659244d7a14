"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps a float64 ndarray plus an optional gradient buffer. Every
operation records a backprop closure and its parent tensors, so calling
``backward()`` on a scalar result replays the chain rule over the recorded
graph (the "tape") in reverse topological order.

Design constraints:
  - float64 throughout, so finite-difference checks at h=1e-4 are meaningful.
  - gradients accumulate (+=) to support fan-out; leaves keep their buffers
    until explicitly cleared.
  - all ops are deterministic; there is no internal RNG.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NoTape, ShapeMismatch

Array = np.ndarray


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return arr


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional value with an optional gradient and tape link."""

    __slots__ = ("data", "grad", "_parents", "_backprop")

    def __init__(self, values, parents: tuple["Tensor", ...] = (), backprop=None):
        self.data: Array = _as_array(values)
        self.grad: Array | None = None
        self._parents = parents
        self._backprop = backprop

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # -- graph walking ---------------------------------------------------

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar result.

        Raises NoTape when the tensor records no computation, ShapeMismatch
        when called on a non-scalar.
        """
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar, got shape {self.data.shape}")
        if self._backprop is None and not self._parents:
            raise NoTape("tensor records no computation to differentiate")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, (self, other))

            def backprop(g):
                self._accumulate(_unbroadcast(g, self.data.shape))
                other._accumulate(_unbroadcast(g, other.data.shape))
        else:
            out = Tensor(self.data + other, (self,))

            def backprop(g):
                self._accumulate(_unbroadcast(g, self.data.shape))

        out._backprop = backprop
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def backprop(g):
            self._accumulate(-g)

        out._backprop = backprop
        return out

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, (self, other))

            def backprop(g):
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        else:
            out = Tensor(self.data * other, (self,))

            def backprop(g):
                self._accumulate(_unbroadcast(g * other, self.data.shape))

        out._backprop = backprop
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data / other.data, (self, other))

            def backprop(g):
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
                )
        else:
            out = Tensor(self.data / other, (self,))

            def backprop(g):
                self._accumulate(_unbroadcast(g / other, self.data.shape))

        out._backprop = backprop
        return out

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        in_shape = self.data.shape

        def backprop(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, in_shape).copy())
                return
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % len(in_shape) for a in axes):
                    gg = np.expand_dims(gg, ax)
            self._accumulate(np.broadcast_to(gg, in_shape).copy())

        out._backprop = backprop
        return out

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,))
        in_shape = self.data.shape

        def backprop(g):
            self._accumulate(g.reshape(in_shape))

        out._backprop = backprop
        return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), (x,))

    def backprop(g):
        x._accumulate(g / x.data)

    out._backprop = backprop
    return out


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient flows only where x > floor."""
    mask = x.data > floor
    out = Tensor(np.maximum(x.data, floor), (x,))

    def backprop(g):
        x._accumulate(g * mask)

    out._backprop = backprop
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(x.data * mask, (x,))

    def backprop(g):
        x._accumulate(g * mask)

    out._backprop = backprop
    return out


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an [N, C, ...] tensor, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, (x,))

    def backprop(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        x._accumulate(p * (g - dot))

    out._backprop = backprop
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 2D convolution.

    x: [N, C, H, W], w: [O, C, kh, kw] with odd kh, kw, b: [O].
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-d input and kernel")
    n, c, h, wd = x.data.shape
    o, ci, kh, kw = w.data.shape
    if ci != c:
        raise ShapeMismatch(f"kernel expects {ci} channels, input has {c}")
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [N, C, H, W, kh, kw]
    vals = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    vals += b.data[None, :, None, None]
    out = Tensor(vals, (x, w, b))

    def backprop(g):
        b._accumulate(g.sum(axis=(0, 2, 3)))
        w._accumulate(np.einsum("nohw,nchwij->ocij", g, win, optimize=True))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + h, j : j + wd] += np.einsum(
                    "nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True
                )
        if ph or pw:
            gxp = gxp[:, :, ph : ph + h, pw : pw + wd]
        x._accumulate(gxp)

    out._backprop = backprop
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient routes to the first argmax."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    hh, ww = h // 2, w // 2
    windows = (
        x.data.reshape(n, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww, 4)
    )
    idx = windows.argmax(axis=-1)
    vals = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Tensor(vals, (x,))

    def backprop(g):
        gw = np.zeros((n, c, hh, ww, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        x._accumulate(gx)

    out._backprop = backprop
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    vals = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(vals, (x,))

    def backprop(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    out._backprop = backprop
    return out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate [N, C_i, H, W] tensors along the channel axis."""
    shapes = [p.data.shape for p in parts]
    if len({(s[0], s[2], s[3]) for s in shapes}) != 1:
        raise ShapeMismatch(f"concat_channels got incompatible shapes {shapes}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))
    widths = [s[1] for s in shapes]

    def backprop(g):
        start = 0
        for part, width in zip(parts, widths):
            part._accumulate(g[:, start : start + width])
            start += width

    out._backprop = backprop
    return out


def numeric_gradient(func, x: Array, indices: Iterable[tuple], h: float = 1e-4) -> dict:
    """Central finite differences of a scalar-valued func at selected indices.

    func takes the full array and returns a float; x is not mutated.
    """
    grads = {}
    work = x.copy()
    for index in indices:
        orig = work[index]
        work[index] = orig + h
        hi = func(work)
        work[index] = orig - h
        lo = func(work)
        work[index] = orig
        grads[index] = (hi - lo) / (2.0 * h)
    return grads
