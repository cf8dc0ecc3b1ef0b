"""Flat parameter storage, optimizers, and checkpoint serialization.

All trainable parameters of a model live in one flat float64 array with a
matching gradient array; named segments map (offset, shape) windows onto
it. Leaf tensors handed to the autodiff trace view directly into these
arrays, so backward() accumulates straight into the store.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError, NumericError

_MAGIC = b"SGTN1"
_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named, non-overlapping segments over one flat value/grad array pair."""

    def __init__(self):
        self._pending: dict[str, np.ndarray] = {}
        self.values: np.ndarray | None = None
        self.grads: np.ndarray | None = None
        self.segments: dict[str, tuple[int, tuple]] = {}
        self.extras: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if self.values is not None:
            raise DataError("store already finalized")
        if name in self._pending:
            raise DataError(f"duplicate segment {name!r}")
        self._pending[name] = np.asarray(array, dtype=np.float64)

    def finalize(self) -> "ParamStore":
        total = sum(a.size for a in self._pending.values())
        self.values = np.zeros(total)
        self.grads = np.zeros(total)
        offset = 0
        for name, arr in self._pending.items():
            self.segments[name] = (offset, arr.shape)
            self.values[offset:offset + arr.size] = arr.ravel()
            offset += arr.size
        self._pending = {}
        return self

    @property
    def size(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.segments[name]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return self.values[offset:offset + n].reshape(shape)

    def grad_view(self, name: str) -> np.ndarray:
        offset, shape = self.segments[name]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return self.grads[offset:offset + n].reshape(shape)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor whose grad buffer aliases the store's gradient array."""
        return Tensor(self.view(name), grad_buffer=self.grad_view(name))

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def segment_of_index(self, idx: int) -> str:
        for name, (offset, shape) in self.segments.items():
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if offset <= idx < offset + n:
                return name
        return "<unknown>"

    def check_finite_grads(self) -> None:
        bad = ~np.isfinite(self.grads)
        if bad.any():
            name = self.segment_of_index(int(np.argmax(bad)))
            raise NumericError(f"non-finite gradient in segment {name!r}")


class GradientDescent:
    """Plain gradient descent: values -= lr * grads, then grads zeroed."""

    def __init__(self, lr: float = 1e-3):
        self.lr = lr

    def step(self, store: ParamStore) -> None:
        store.check_finite_grads()
        store.values -= self.lr * store.grads
        store.zero_grad()


class Adam:
    """Adaptive-moment gradient descent (the default trainer)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, store: ParamStore) -> None:
        store.check_finite_grads()
        if self.m is None:
            self.m = np.zeros_like(store.values)
            self.v = np.zeros_like(store.values)
        self.t += 1
        g = store.grads
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        store.values -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        store.zero_grad()


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind in ("sgd", "gd"):
        return GradientDescent(lr=lr)
    raise DataError(f"unknown optimizer {kind!r}")


def save_checkpoint(store: ParamStore, path: str,
                    extras: dict | None = None) -> None:
    """Binary checkpoint: magic, version, segment table, raw float64 values.

    extras holds named non-learned arrays (e.g. frozen normalization
    statistics); they are appended after the parameter block.
    """
    extras = extras if extras is not None else getattr(store, "extras", {})
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", _VERSION, len(store.segments)))
        for name, (offset, shape) in store.segments.items():
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<QQ", offset, len(shape)))
            for d in shape:
                fh.write(struct.pack("<Q", d))
        fh.write(struct.pack("<Q", store.size))
        fh.write(store.values.astype("<f8").tobytes())
        fh.write(struct.pack("<Q", len(extras)))
        for name, arr in extras.items():
            arr = np.asarray(arr, dtype=np.float64)
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<Q", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str) -> ParamStore:
    with open(path, "rb") as fh:
        if fh.read(5) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, n_seg = struct.unpack("<QQ", fh.read(16))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        segments = {}
        for _ in range(n_seg):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            offset, ndim = struct.unpack("<QQ", fh.read(16))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            segments[name] = (offset, shape)
        (total,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(8 * total), dtype="<f8").copy()
        extras = {}
        head = fh.read(8)
        if len(head) == 8:
            (n_extra,) = struct.unpack("<Q", head)
            for _ in range(n_extra):
                (name_len,) = struct.unpack("<H", fh.read(2))
                name = fh.read(name_len).decode()
                (ndim,) = struct.unpack("<Q", fh.read(8))
                shape = tuple(struct.unpack("<Q", fh.read(8))[0]
                              for _ in range(ndim))
                count = int(np.prod(shape)) if shape else 1
                extras[name] = np.frombuffer(
                    fh.read(8 * count), dtype="<f8").copy().reshape(shape)
    store = ParamStore()
    store.values = values
    store.grads = np.zeros_like(values)
    store.segments = segments
    store._pending = {}
    store.extras = extras
    return store
