"""Dense float tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every op records its inputs and a backward
closure on the result, and ``backward()`` on a scalar walks the graph in
reverse topological order. numpy supplies the array kernels; everything
about the graph, the gradients, and the op semantics lives here.

Tensors default to float32. Ops inherit the dtype of their operands, so
tests can run the same formulas in float64 when they need finite
differences free of float32 roundoff.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference-only forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _lift(x, like: "Tensor") -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like.data.dtype))

    # -- basic introspection ---------------------------------------------------

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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autograd --------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be scalar, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # free intermediate buffers; leaves keep their grads
                node._backward = None
                node._parents = ()
                node.grad = None if node is not self else node.grad

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other, self)
        data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        data = -self.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._result(data, (self,), backward)

    def __sub__(self, other):
        other = Tensor._lift(other, self)
        data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._result(data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._lift(other, self) - self

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
                )

        return Tensor._result(data, (self, other), backward)

    def __pow__(self, p: float):
        data = self.data ** p

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * p * self.data ** (p - 1))

        return Tensor._result(data, (self,), backward)

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, self.shape).astype(self.data.dtype))

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape ops ------------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old))

        return Tensor._result(data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        data = self.data.transpose(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))

        return Tensor._result(data, (self,), backward)

    def __getitem__(self, idx):
        data = self.data[idx]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)

        return Tensor._result(data, (self,), backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- nonlinearities ------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return Tensor._result(data, (x,), backward)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    data = np.where(x.data > 0, x.data, alpha * x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(x.data > 0, 1.0, alpha).astype(x.data.dtype))

    return Tensor._result(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data)

    return Tensor._result(data, (x,), backward)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor._result(data, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    data = np.abs(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.sign(x.data))

    return Tensor._result(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # stable both directions: exp of a non-positive argument only
    data = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.maximum(x.data, 0))),
        np.exp(np.minimum(x.data, 0)) / (1.0 + np.exp(np.minimum(x.data, 0))),
    ).astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data * (1.0 - data))

    return Tensor._result(data, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def backward(g):
        if x.requires_grad:
            s = np.where(
                x.data >= 0,
                1.0 / (1.0 + np.exp(-np.maximum(x.data, 0))),
                np.exp(np.minimum(x.data, 0)) / (1.0 + np.exp(np.minimum(x.data, 0))),
            )
            x._accumulate(g * s.astype(x.data.dtype))

    return Tensor._result(data, (x,), backward)


# -- linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._result(data, (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._result(data, tuple(tensors), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: index out of range for table of {table.shape[0]} rows"
        )
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accumulate(full)

    return Tensor._result(data, (table,), backward)


# -- normalization and softmax -----------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - dot))

    return Tensor._result(data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - logz

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return Tensor._result(data, (x,), backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = (x.data - mu) * inv

    def backward(g):
        if x.requires_grad:
            n = x.shape[-1]
            gm = g.mean(axis=-1, keepdims=True)
            gy = (g * data).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (g - gm - data * gy))

    return Tensor._result(data, (x,), backward)


# -- convolution -----------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), (oh, ow)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    xpad = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xpad[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                cols6[:, :, i, j]
            )
    if pad:
        return xpad[:, :, pad : pad + h, pad : pad + w]
    return xpad


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, layout N,C,H,W; weight O,I,kh,kw."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    cols, (oh, ow) = _im2col(x.data, kh, kw, stride, padding)
    w_mat = w.data.reshape(co, ci * kh * kw)
    out = (w_mat @ cols).reshape(n, co, oh, ow)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g_mat = g.reshape(n, co, oh * ow)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.einsum("nop,ncp->oc", g_mat, cols, optimize=True)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = w_mat.T @ g_mat
            x._accumulate(_col2im(gcols, x.shape, kh, kw, stride, padding))

    return Tensor._result(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution; weight I,O,kh,kw; inverts conv2d's geometry."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d: incompatible shapes {x.shape} and {w.shape}")
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    oh = (h - 1) * stride + kh - 2 * padding
    ow = (wd - 1) * stride + kw - 2 * padding
    w_mat = w.data.reshape(ci, co * kh * kw)
    x_mat = x.data.reshape(n, ci, h * wd)
    cols = np.swapaxes(w_mat, 0, 1) @ x_mat
    out = _col2im(cols, (n, co, oh, ow), kh, kw, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gcols, _ = _im2col(g, kh, kw, stride, padding)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = w_mat @ gcols
            x._accumulate(gx.reshape(x.shape))
        if w.requires_grad:
            gw = np.einsum("ncp,nkp->ck", x_mat, gcols, optimize=True)
            w._accumulate(gw.reshape(w.shape))

    return Tensor._result(out, parents, backward)


# -- gradient routing ----------------------------------------------------------------


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; blocks all gradient flow into x."""
    return Tensor(x.data.copy(), dtype=x.data.dtype)


def straight_through(x: Tensor, quantized: Tensor) -> Tensor:
    """Forward value of ``quantized``; gradient passes unchanged to ``x`` only."""
    if x.shape != quantized.shape:
        raise ShapeError(
            f"straight_through: shape mismatch {x.shape} and {quantized.shape}"
        )
    data = quantized.data.copy()

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)

    return Tensor._result(data, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted next-token loss: sum(w * nll) / sum(w) over flat positions.

    ``logits`` is (P, V); ``targets`` int (P,); ``weights`` float (P,).
    Positions with weight 0 contribute exactly zero loss and zero gradient.
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.data.dtype)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    idx = np.arange(targets.shape[0])
    nll = -logp[idx, targets]
    wsum = float(weights.sum())
    denom = wsum if wsum > 0 else 1.0
    data = np.asarray((nll * weights).sum() / denom, dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logp)
            grad = p * weights[:, None]
            grad[idx, targets] -= weights
            logits._accumulate(grad * (float(g) / denom))

    return Tensor._result(data, (logits,), backward)
