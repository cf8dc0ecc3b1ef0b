"""Point-cloud network predicting the 3x3 spectral alignment transform.

Two shared per-point linear layers (3 -> 256 -> 128, ReLU) feed an average
pool, then an MLP (128 -> 128 -> 64 -> 9) whose output is reshaped row-major
into the transform. Average pooling makes the prediction invariant to the
order of the input points. The transform is used as predicted; orthogonality
is only encouraged by the training penalty, never enforced.
"""

from __future__ import annotations

import csv
import time

import numpy as np

from . import autodiff as ad
from .align import Transform3
from .autodiff import Tensor
from .errors import DataError, NumericError
from .params import ParamStore, glorot_uniform, make_optimizer, save_checkpoint
from .spectral import SpectralEmbedding, random_sign_flip, subsample

LAYER_DIMS = [
    ("pw1", 3, 256),
    ("pw2", 256, 128),
    ("mlp1", 128, 128),
    ("mlp2", 128, 64),
    ("mlp3", 64, 9),
]


class SgtModel:
    """Holds the parameter store; stateless apart from it."""

    def __init__(self, store: ParamStore, use_bias: bool = True):
        self.store = store
        self.use_bias = use_bias

    @classmethod
    def init(cls, seed: int = 0, use_bias: bool = True) -> "SgtModel":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for name, fan_in, fan_out in LAYER_DIMS:
            store.add(f"{name}_w", glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)))
            if use_bias:
                store.add(f"{name}_b", np.zeros(fan_out))
        store.finalize()
        return cls(store, use_bias)

    def _layer(self, name: str, x: Tensor) -> Tensor:
        w = self.store.tensor(f"{name}_w")
        b = self.store.tensor(f"{name}_b") if self.use_bias else None
        out = ad.pointwise_linear(x, w, b)
        if not np.isfinite(out.data).all():
            raise NumericError(f"non-finite activation in layer {name!r}")
        return out

    def forward_tensor(self, points: Tensor) -> Tensor:
        """Transform as a (3, 3) tensor in the current trace.

        The input cloud is reduced to a canonical axis-sign form (largest
        magnitude entry of each column positive) before entering the network,
        and the predicted transform is mapped back through the same signs.
        This makes the predictor exactly equivariant to eigenvector sign
        flips: sign-flip augmentation is absorbed rather than memorized,
        which the average-pooled features are too weak to support otherwise.
        """
        if points.data.ndim != 2 or points.data.shape[1] != 3:
            raise DataError(f"points must be (N, 3), got {points.shape}")
        signs = _canonical_signs(points.data)
        points = points * ad.constant(signs)
        h = ad.relu(self._layer("pw1", points))
        h = ad.relu(self._layer("pw2", h))
        pooled = ad.average_pool_rows(h)
        mu = self.store.extras.get("pool_mu")
        scale = self.store.extras.get("pool_scale")
        if mu is not None and scale is not None:
            # Frozen training-set statistics. Pooled features vary between
            # subjects by a tiny fraction of their absolute level; without
            # removing the shared offset, gradient descent stalls on the
            # readout long before it can use the differences.
            pooled = (pooled - ad.constant(mu)) * ad.constant(1.0 / scale)
        # The head is a factorized linear map. After sign canonicalization
        # the cloud-to-transform relation is essentially linear in the pooled
        # features, and a linear head trained from small weights keeps the
        # minimum-norm character that lets 21 training subjects fix the map;
        # rectified head layers memorize the training split and generalize
        # an order of magnitude worse.
        h = self._layer("mlp1", pooled)
        h = self._layer("mlp2", h)
        out = self._layer("mlp3", h)
        return ad.constant(np.diag(signs)) @ ad.reshape(out, (3, 3))


def _canonical_signs(points: np.ndarray) -> np.ndarray:
    """Per-axis sign making the third moment of each column positive.

    The third moment is a smooth function of the cloud, so nearby clouds
    get the same orientation; a largest-entry rule can tie-break differently
    for two nearly identical clouds. Columns with no measurable asymmetry
    fall back to the largest-entry rule.
    """
    col = points / np.maximum(np.linalg.norm(points, axis=0, keepdims=True),
                              1e-300)
    skew = (col ** 3).sum(axis=0)
    idx = np.argmax(np.abs(points), axis=0)
    picked = points[idx, np.arange(points.shape[1])]
    fallback = np.where(picked < 0.0, -1.0, 1.0)
    return np.where(np.abs(skew) > 1e-8, np.sign(skew), fallback)


def fit_pool_stats(model: SgtModel,
                   dataset: list[tuple[SpectralEmbedding, np.ndarray]]) -> None:
    """Freeze pooled-feature normalization statistics on the training set.

    Stores the mean pooled feature vector over the (sign-canonical) training
    clouds and one scalar spread, persisted in the model's checkpoint next
    to the learned parameters. A single scalar keeps the relative scale of
    the feature directions intact, which is what lets a small-weight readout
    generalize; per-feature scaling would inflate noise directions.
    """
    w1 = model.store.view("pw1_w")
    b1 = model.store.view("pw1_b") if model.use_bias else 0.0
    w2 = model.store.view("pw2_w")
    b2 = model.store.view("pw2_b") if model.use_bias else 0.0
    pooled = []
    for emb, _ in dataset:
        c = emb.coords * _canonical_signs(emb.coords)
        h = np.maximum(c @ w1 + b1, 0.0)
        h = np.maximum(h @ w2 + b2, 0.0)
        pooled.append(h.mean(axis=0))
    pooled = np.array(pooled)
    mu = pooled.mean(axis=0)
    scale = float(np.sqrt(((pooled - mu) ** 2).mean()))
    model.store.extras["pool_mu"] = mu
    model.store.extras["pool_scale"] = np.array(max(scale, 1e-12))


def warm_start_head(model: SgtModel,
                    dataset: list[tuple[SpectralEmbedding, np.ndarray]]) -> None:
    """Initialize the linear head from the least-squares readout fit.

    With the per-point encoder frozen, the head is a product of linear maps,
    so the best it can do is the least-squares fit of the targets on the
    normalized pooled features. Gradient descent from a small random start
    converges towards that fit but needs hours to cover the distance; this
    computes it directly (minimum-norm via lstsq, which is what small-init
    gradient descent would approach) and factorizes it through the head
    layers, leaving training to fine-tune around it.
    """
    if "pool_mu" not in model.store.extras:
        fit_pool_stats(model, dataset)
    mu = model.store.extras["pool_mu"]
    scale = float(model.store.extras["pool_scale"])
    w1 = model.store.view("pw1_w")
    b1 = model.store.view("pw1_b") if model.use_bias else 0.0
    w2 = model.store.view("pw2_w")
    b2 = model.store.view("pw2_b") if model.use_bias else 0.0
    feats, targets = [], []
    for emb, target in dataset:
        signs = _canonical_signs(emb.coords)
        c = emb.coords * signs
        h = np.maximum(c @ w1 + b1, 0.0)
        h = np.maximum(h @ w2 + b2, 0.0)
        feats.append((h.mean(axis=0) - mu) / scale)
        # The head sees the sign-canonical cloud, so it must predict the
        # transform in that frame; solve target = (emb diag(s)) @ T_head.
        t_head, *_ = np.linalg.lstsq(c, target, rcond=None)
        targets.append(t_head.reshape(9))
    x = np.hstack([np.array(feats), np.ones((len(feats), 1))])
    w, *_ = np.linalg.lstsq(x, np.array(targets), rcond=None)
    w_lin, intercept = w[:-1], w[-1]
    # Factor the (128, 9) map through mlp1 (identity), mlp2, mlp3 using the
    # thin SVD; rank is at most 9 so it fits through the 64-wide layer.
    u, s, vt = np.linalg.svd(w_lin, full_matrices=False)
    r = s.size
    root = np.sqrt(s)
    model.store.view("mlp1_w")[:] = np.eye(128)
    model.store.view("mlp2_w")[:] = 0.0
    model.store.view("mlp2_w")[:, :r] = u * root
    model.store.view("mlp3_w")[:] = 0.0
    model.store.view("mlp3_w")[:r, :] = root[:, None] * vt
    if model.use_bias:
        model.store.view("mlp1_b")[:] = 0.0
        model.store.view("mlp2_b")[:] = 0.0
        model.store.view("mlp3_b")[:] = intercept


def sgt_forward(model: SgtModel, points: np.ndarray) -> Transform3:
    """Inference-only prediction of the alignment transform."""
    t = model.forward_tensor(ad.constant(np.asarray(points, dtype=np.float64)))
    return Transform3(t.data)


def sgt_loss(model: SgtModel, emb_coords: np.ndarray, target: np.ndarray,
             points: np.ndarray) -> tuple[Tensor, float, float]:
    """Alignment loss: ||target - emb @ T||_F^2 + ||T T' - I||_F^2.

    T is predicted from the (sub-sampled) points but the data term runs
    over every node of the embedding. Returns the scalar loss tensor plus
    the two term values for logging.
    """
    emb_coords = np.asarray(emb_coords, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if emb_coords.shape != target.shape:
        raise DataError(
            f"embedding {emb_coords.shape} and target {target.shape} differ"
        )
    t = model.forward_tensor(ad.constant(points))
    data = ad.frobenius_sq(ad.constant(target) - ad.constant(emb_coords) @ t)
    ortho = ad.frobenius_sq(t @ ad.transpose(t) - ad.constant(np.eye(3)))
    loss = data + ortho
    return loss, data.item(), ortho.item()


def sgt_ortho_loss(model: SgtModel, points: np.ndarray) -> tuple[Tensor, float, float]:
    """Orthogonality penalty alone (the penalty-only pretraining variant)."""
    t = model.forward_tensor(ad.constant(points))
    ortho = ad.frobenius_sq(t @ ad.transpose(t) - ad.constant(np.eye(3)))
    return ortho, 0.0, ortho.item()


def train_sgt(model: SgtModel,
              dataset: list[tuple[SpectralEmbedding, np.ndarray]],
              epochs: int = 200, batch_size: int = 4, seed: int = 0,
              lr: float = 1e-6, n_subsample: int = 1000,
              optimizer: str = "gd", augment: bool = True,
              ortho_only: bool = False, log_path: str | None = None,
              checkpoint_path: str | None = None,
              train_pointwise: bool = False,
              warm_start: bool = True) -> list[dict]:
    """Train against oracle-aligned targets with sign-flip augmentation.

    dataset: (embedding, oracle-aligned coordinates) pairs. Gradients are
    averaged over each batch of meshes. Returns per-epoch log rows.

    By default the two per-point layers stay at their random initialization
    and only the MLP head is trained. The pooled-feature normalization
    amplifies gradients into the per-point layers by the inverse feature
    spread (about 1e4), which blows the encoder up within a few steps;
    random per-point features are rich enough for the readout.

    The head starts from its closed-form least-squares fit (warm_start_head)
    and plain descent with a small step fine-tunes it; adaptive-moment steps
    have a fixed magnitude near a minimum and drift off the fit, so they are
    not the default here even though they are elsewhere.
    """
    if "pool_mu" not in model.store.extras:
        fit_pool_stats(model, dataset)
    if warm_start and not ortho_only:
        warm_start_head(model, dataset)
    frozen = []
    if not train_pointwise:
        for seg in ("pw1_w", "pw1_b", "pw2_w", "pw2_b"):
            if seg in model.store.segments:
                off, shape = model.store.segments[seg]
                frozen.append((off, off + int(np.prod(shape))))
    opt = make_optimizer(optimizer, lr)
    rng = np.random.default_rng(seed)
    log_rows = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        data_terms, ortho_terms = [], []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            scale = 1.0 / len(batch)
            for idx in batch:
                emb, target = dataset[idx]
                if augment:
                    emb = random_sign_flip(emb, int(rng.integers(2 ** 62)))
                pts = subsample(emb, min(n_subsample, emb.node_count),
                                int(rng.integers(2 ** 62)))
                if ortho_only:
                    loss, dterm, oterm = sgt_ortho_loss(model, pts)
                else:
                    loss, dterm, oterm = sgt_loss(model, emb.coords, target, pts)
                if not np.isfinite(loss.item()):
                    if checkpoint_path:
                        save_checkpoint(model.store, checkpoint_path)
                    raise NumericError(f"training diverged at epoch {epoch}")
                (loss * scale).backward()
                data_terms.append(dterm)
                ortho_terms.append(oterm)
            for lo, hi in frozen:
                model.store.grads[lo:hi] = 0.0
            opt.step(model.store)
        log_rows.append({
            "epoch": epoch,
            "mean_data_term": float(np.mean(data_terms)),
            "mean_ortho_term": float(np.mean(ortho_terms)),
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        })
    if checkpoint_path:
        save_checkpoint(model.store, checkpoint_path)
    if log_path:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["epoch", "mean_data_term", "mean_ortho_term", "wall_ms"])
            writer.writeheader()
            writer.writerows(log_rows)
    return log_rows
