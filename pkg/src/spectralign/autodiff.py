"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and records the operation that produced it.
backward() on a scalar walks the trace in reverse topological order and
accumulates gradients into each leaf's grad buffer. The trace is rebuilt on
every forward pass; there is no graph reuse.

All math is float64: the test suite leans on central finite differences,
which float32 noise would drown.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the reverse-mode trace."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, grad_buffer=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = grad_buffer  # preallocated for ParamStore leaves
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise DataError(f"backward requires a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))
        def bwd(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))
        out._backward = bwd
        return out

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data - other.data, (self, other))
        def bwd(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(-_unbroadcast(g, other.shape))
        out._backward = bwd
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))
        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward = bwd
        return out

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, (self, other))
        def bwd(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / other.data ** 2, other.shape))
        out._backward = bwd
        return out

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))
        def bwd(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)
        out._backward = bwd
        return out

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A leaf that never receives gradient."""
    t = Tensor(x)
    t._backward = None
    return t


# -- shape ops ---------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))
    out._backward = lambda g: x._accumulate(g.reshape(x.shape))
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T, (x,))
    out._backward = lambda g: x._accumulate(g.T)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0]:
        raise DataError(f"row mismatch in concat: {a.shape} vs {b.shape}")
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), (a, b))
    def bwd(g):
        a._accumulate(g[:, :na])
        b._accumulate(g[:, na:])
    out._backward = bwd
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], (x,))
    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accumulate(gx)
    out._backward = bwd
    return out


# -- reductions ---------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())
    out._backward = bwd
    return out


def tmean(x: Tensor) -> Tensor:
    return tsum(x) * (1.0 / x.data.size)


def average_pool_rows(x: Tensor) -> Tensor:
    """Mean over rows; output shape (1, M)."""
    n = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True), (x,))
    out._backward = lambda g: x._accumulate(np.broadcast_to(g / n, x.shape).copy())
    return out


def frobenius_sq(x: Tensor) -> Tensor:
    return tsum(x * x)


# -- elementwise nonlinearities ------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data), (x,))
    out._backward = lambda g: x._accumulate(g * out.data)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), (x,))
    out._backward = lambda g: x._accumulate(g / x.data)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), (x,))
    out._backward = lambda g: x._accumulate(g * (x.data > 0))
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data), (x,))
    out._backward = lambda g: x._accumulate(g * np.where(x.data > 0, 1.0, slope))
    return out


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x), computed stably
    out = Tensor(np.logaddexp(0.0, x.data), (x,))
    out._backward = lambda g: x._accumulate(g / (1.0 + np.exp(-x.data)))
    return out


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, (x,))
    def bwd(g):
        x._accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))
    out._backward = bwd
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(z - lse, (x,))
    def bwd(g):
        soft = np.exp(out.data)
        x._accumulate(g - soft * g.sum(axis=1, keepdims=True))
    out._backward = bwd
    return out


# -- structured ops -------------------------------------------------------

def pointwise_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b per row): the shared per-node linear map."""
    if x.data.shape[1] != w.data.shape[0]:
        raise DataError(
            f"pointwise_linear shape mismatch: input {x.shape} vs weight {w.shape}"
        )
    out = x @ w
    if b is not None:
        if b.data.shape[-1] != w.data.shape[1]:
            raise DataError(f"bias {b.shape} does not match weight {w.shape}")
        out = out + b
    return out


def scatter_rows_weighted(h: Tensor, weights: Tensor, src: np.ndarray,
                          dst: np.ndarray, n_out: int) -> Tensor:
    """out[dst[e]] += weights[e] * h[src[e]] for every edge e.

    The workhorse of the graph convolution; forward and both backward
    products run through one sparse matrix per call.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = weights.data.ravel()
    if len(w) != len(src) or len(src) != len(dst):
        raise DataError("edge arrays and weights must have equal length")
    mat = sp.csr_matrix((w, (dst, src)), shape=(n_out, h.data.shape[0]))
    out = Tensor(mat @ h.data, (h, weights))
    def bwd(g):
        h._accumulate(mat.T @ g)
        gw = np.einsum("ij,ij->i", h.data[src], g[dst])
        weights._accumulate(gw.reshape(weights.shape))
    out._backward = bwd
    return out


# -- gradient checking ----------------------------------------------------

def finite_difference_check(build_loss, arrays, step: float = 1e-6) -> float:
    """Compare reverse-mode gradients against central finite differences.

    build_loss takes one Tensor per input array and returns a scalar
    Tensor. Returns the worst relative gradient error over all inputs,
    measured as ||g - g_fd|| / max(||g||, ||g_fd||, 1e-8).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy()) for a in arrays]
    loss = build_loss(*leaves)
    loss.backward()
    worst = 0.0
    for a, leaf in zip(arrays, leaves):
        g = leaf.grad if leaf.grad is not None else np.zeros_like(a)
        fd = np.zeros_like(a)
        flat = a.ravel()
        fd_flat = fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = build_loss(*[Tensor(x.copy()) for x in arrays]).item()
            flat[i] = orig - step
            lo = build_loss(*[Tensor(x.copy()) for x in arrays]).item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2 * step)
        denom = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
        worst = max(worst, np.linalg.norm(g - fd) / denom)
    if not np.isfinite(worst):
        raise NumericError("non-finite gradient in finite-difference check")
    return worst
