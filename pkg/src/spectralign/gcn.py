"""Gaussian-kernel graph convolution network for mesh node parcellation.

Each layer filters a node's neighborhood with K learned Gaussians over
spectral-coordinate differences:

    z_ip = sum_{j in N_i} sum_q sum_k w_pqk * y_jq * exp(-sigma_k ||(u_j - u_i) - mu_k||^2) + b_p

Neighborhoods include the node itself by default so a node's own features
reach layer 1 (flag-controllable). Kernel widths are stored as raw values
and passed through softplus to stay positive.
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .params import ParamStore, glorot_uniform

LAYER_WIDTHS = (256, 128, 64, 32)
KERNELS_PER_LAYER = 6
N_CLASSES = 32
INPUT_DIM = 4  # 3 aligned spectral coordinates + 1 scalar feature
LEAKY_SLOPE = 0.01
DEFAULT_SIGMA = 100.0

_PROB_MAGIC = b"PROB1"


def gaussian_kernel(u_i, u_j, mu, sigma: float) -> float:
    """exp(-sigma ||(u_j - u_i) - mu||^2); in (0, 1]."""
    if sigma <= 0:
        raise DataError("sigma must be positive")
    d = np.asarray(u_j, dtype=np.float64) - np.asarray(u_i, dtype=np.float64)
    return float(np.exp(-sigma * ((d - np.asarray(mu)) ** 2).sum()))


def graph_edges(mesh_edges: np.ndarray, n: int,
                include_self: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Directed (src, dst) arrays from undirected mesh edges, plus self loops.

    Raises if any node ends up without a neighborhood.
    """
    e = np.asarray(mesh_edges, dtype=np.int64)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    if include_self:
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
    if np.bincount(dst, minlength=n).min() == 0:
        raise DataError("node with empty neighbor list")
    return src, dst


def standardize_feature(feature: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per mesh (flat features map to zeros)."""
    f = np.asarray(feature, dtype=np.float64).ravel()
    std = f.std()
    return (f - f.mean()) / (std if std > 0 else 1.0)


class GcnModel:
    def __init__(self, store: ParamStore, widths=LAYER_WIDTHS,
                 kernels: int = KERNELS_PER_LAYER, use_bias: bool = True,
                 include_self: bool = True):
        self.store = store
        self.widths = tuple(widths)
        self.kernels = kernels
        self.use_bias = use_bias
        self.include_self = include_self

    @classmethod
    def init(cls, seed: int = 0, widths=LAYER_WIDTHS, kernels: int = KERNELS_PER_LAYER,
             sigma0: float = DEFAULT_SIGMA, use_bias: bool = True,
             include_self: bool = True, input_dim: int = INPUT_DIM) -> "GcnModel":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        rho0 = float(np.log(np.expm1(sigma0))) if sigma0 < 500 else sigma0
        dims = (input_dim,) + tuple(widths)
        for l in range(len(widths)):
            m_in, m_out = dims[l], dims[l + 1]
            store.add(f"l{l + 1}_mu", rng.uniform(-0.1, 0.1, size=(kernels, 3)))
            store.add(f"l{l + 1}_rho", np.full(kernels, rho0))
            store.add(f"l{l + 1}_w",
                      glorot_uniform(rng, m_in * kernels, m_out, (kernels, m_in, m_out)))
            if use_bias:
                store.add(f"l{l + 1}_b", np.zeros(m_out))
        store.finalize()
        return cls(store, widths, kernels, use_bias, include_self)

    def layer_tensors(self, l: int) -> dict[str, Tensor | None]:
        s = self.store
        return {
            "mu": s.tensor(f"l{l}_mu"),
            "rho": s.tensor(f"l{l}_rho"),
            "w": s.tensor(f"l{l}_w"),
            "b": s.tensor(f"l{l}_b") if self.use_bias else None,
        }


def gconv_layer(features: Tensor, coords: Tensor, src: np.ndarray, dst: np.ndarray,
                mu: Tensor, rho: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """One Gaussian-kernel graph convolution, differentiable in everything."""
    n, m_in = features.data.shape
    kernels, w_in, m_out = w.data.shape
    if w_in != m_in:
        raise DataError(f"filter expects {w_in} input channels, features have {m_in}")
    d = ad.gather_rows(coords, src) - ad.gather_rows(coords, dst)
    sigma = ad.softplus(rho)
    out = None
    for k in range(kernels):
        dm = d - ad.gather_rows(mu, np.array([k]))
        sq = ad.tsum(dm * dm, axis=1)
        phi = ad.exp(-(ad.gather_rows(sigma, np.array([k])) * sq))
        h = features @ ad.reshape(ad.gather_rows(w, np.array([k])), (m_in, m_out))
        term = ad.scatter_rows_weighted(h, phi, src, dst, n)
        out = term if out is None else out + term
    if b is not None:
        out = out + b
    return out


def gconv_layer_reference(features: np.ndarray, coords: np.ndarray,
                          src: np.ndarray, dst: np.ndarray,
                          mu: np.ndarray, sigma: np.ndarray,
                          w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Naive triple-loop evaluation of the layer; the correctness oracle."""
    n, m_in = features.shape
    kernels, _, m_out = w.shape
    out = np.zeros((n, m_out)) if b is None else np.tile(b, (n, 1)).astype(np.float64)
    for j, i in zip(src, dst):
        for k in range(kernels):
            phi = gaussian_kernel(coords[i], coords[j], mu[k], float(sigma[k]))
            for p in range(m_out):
                for q in range(m_in):
                    out[i, p] += w[k, q, p] * features[j, q] * phi
    return out


def gcn_forward(model: GcnModel, coords, feature: np.ndarray,
                src: np.ndarray, dst: np.ndarray) -> Tensor:
    """Per-node class probabilities (rows sum to 1) as a tensor.

    coords may be a Tensor (end-to-end training, gradients flow into the
    upstream transform) or a plain array.
    """
    coords_t = coords if isinstance(coords, Tensor) else ad.constant(np.asarray(coords, dtype=np.float64))
    scalar = standardize_feature(feature).reshape(-1, 1)
    if scalar.shape[0] != coords_t.data.shape[0]:
        raise DataError("feature length does not match coordinate rows")
    x = ad.concat_cols(coords_t, ad.constant(scalar))
    for l in range(1, len(model.widths) + 1):
        p = model.layer_tensors(l)
        x = gconv_layer(x, coords_t, src, dst, p["mu"], p["rho"], p["w"], p["b"])
        if l < len(model.widths):
            x = ad.leaky_relu(x, LEAKY_SLOPE)
    return ad.softmax_rows(x)


def parcellation_loss(probs: Tensor, labels: np.ndarray) -> tuple[Tensor, float, float]:
    """Mean cross-entropy plus (1 - mean soft Dice over classes in the truth)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.data.shape
    if len(labels) != n:
        raise DataError(f"{len(labels)} labels for {n} probability rows")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    counts = onehot.sum(axis=0)

    picked = ad.tsum(probs * ad.constant(onehot), axis=1)
    ce = -(ad.tsum(ad.log(picked)) * (1.0 / n))

    num = ad.tsum(probs * ad.constant(onehot), axis=0) * 2.0
    den = ad.tsum(probs, axis=0) + ad.constant(counts)
    present = (counts > 0).astype(np.float64)
    mean_dice = ad.tsum((num / den) * ad.constant(present)) * (1.0 / present.sum())
    dice_term = 1.0 - mean_dice

    loss = ce + dice_term
    return loss, ce.item(), dice_term.item()


def predict_labels(probs: np.ndarray) -> np.ndarray:
    return np.argmax(probs, axis=1).astype(np.int64)


def save_probabilities(probs: np.ndarray, path: str) -> None:
    probs = np.asarray(probs, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_PROB_MAGIC)
        fh.write(struct.pack("<QQ", probs.shape[0], probs.shape[1]))
        fh.write(np.ascontiguousarray(probs, dtype="<f8").tobytes())


def load_probabilities(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(5) != _PROB_MAGIC:
            raise DataError(f"{path}: not a probability file")
        n, c = struct.unpack("<QQ", fh.read(16))
        return np.frombuffer(fh.read(8 * n * c), dtype="<f8").reshape(n, c).copy()
