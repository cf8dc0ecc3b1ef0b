"""End-to-end orchestration: subject preparation, training configurations,
evaluation, benchmarking, and the subsample study.

A "strategy" names how per-node coordinates are produced for the GCN:
  none        raw spectral coordinates (no alignment)
  oracle      iterative-alignment coordinates (the slow baseline)
  pretrained  frozen learned aligner (trained beforehand)
  e2e         learned aligner trained jointly with the GCN
"""

from __future__ import annotations

import concurrent.futures as cf
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .align import (AlignmentResult, Transform3, align_iterative, apply_transform,
                    nearest_correspondence)
from .errors import DataError, NumericError
from .gcn import GcnModel, gcn_forward, graph_edges, parcellation_loss, predict_labels
from .mesh import SurfaceMesh, build_adjacency, load_labels, load_mesh, load_scalars, normalized_laplacian
from .metrics import accuracy, avg_hausdorff, dice_overlap
from .params import make_optimizer
from .sgt import SgtModel, sgt_forward, train_sgt
from .spectral import SpectralEmbedding, eigensolve_smallest, random_sign_flip, subsample
from .synthetic import SubjectRecord, load_manifest

STRATEGIES = ("none", "oracle", "pretrained", "e2e")


def worker_count() -> int:
    env = os.environ.get("SPECTRAL_SURF_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


@dataclass
class Subject:
    record: SubjectRecord
    mesh: SurfaceMesh
    labels: np.ndarray
    feature: np.ndarray
    embedding: SpectralEmbedding
    src: np.ndarray
    dst: np.ndarray
    alignment: AlignmentResult | None = None
    target: np.ndarray | None = None  # oracle-aligned coordinates

    @property
    def split(self) -> str:
        return self.record.split


def load_subjects(manifest_path: str, k: int = 3, tol: float = 1e-8,
                  seed: int = 0, include_self: bool = True) -> list[Subject]:
    """Load meshes and compute embeddings for every manifest entry."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = load_manifest(manifest_path)

    def prepare(record: SubjectRecord) -> Subject:
        mesh = load_mesh(os.path.join(base, record.mesh_path))
        labels = load_labels(os.path.join(base, record.label_path), mesh.n_vertices)
        feature = load_scalars(os.path.join(base, record.feature_path), mesh.n_vertices)
        lap = normalized_laplacian(build_adjacency(mesh))
        emb = eigensolve_smallest(lap, k=k, tol=tol, seed=seed)
        src, dst = graph_edges(mesh.edges(), mesh.n_vertices, include_self)
        return Subject(record, mesh, labels, feature, emb, src, dst)

    with cf.ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(prepare, records))


def pick_reference(subjects: list[Subject], reference_id: str | None = None) -> Subject:
    if reference_id is not None:
        for s in subjects:
            if s.record.subject_id == reference_id:
                return s
        raise DataError(f"reference subject {reference_id!r} not in manifest")
    for s in subjects:
        if s.split == "train":
            return s
    raise DataError("manifest has no training subject to use as reference")


def compute_oracle_targets(subjects: list[Subject], reference: Subject,
                           max_iter: int = 100, tol: float = 1e-9) -> None:
    """Attach oracle alignment and aligned coordinates to every subject."""

    def run(s: Subject) -> AlignmentResult:
        return align_iterative(s.embedding, reference.embedding,
                               max_iter=max_iter, tol=tol)

    with cf.ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, subjects))
    for s, res in zip(subjects, results):
        s.alignment = res
        s.target = apply_transform(s.embedding, res.transform).coords


def alignment_mse(coords: np.ndarray, reference_coords: np.ndarray) -> float:
    """Per-node mean squared misfit to the nearest reference coordinate."""
    corr = nearest_correspondence(coords, reference_coords)
    diff = coords - reference_coords[corr]
    return float((diff * diff).sum() / len(coords))


def target_mse(coords: np.ndarray, target: np.ndarray) -> float:
    """Per-node mean squared error against the oracle-aligned coordinates."""
    diff = coords - target
    return float((diff * diff).sum() / len(coords))


def split_of(subjects: list[Subject], split: str) -> list[Subject]:
    return [s for s in subjects if s.split == split]


# -- parcellation training -------------------------------------------------


def _predicted_coords(subject: Subject, sgt_model: SgtModel, n_subsample: int,
                      seed: int, emb: SpectralEmbedding | None = None,
                      trace: bool = False):
    """Coordinates aligned by the learned transform; tensor when tracing."""
    emb = emb or subject.embedding
    pts = subsample(emb, min(n_subsample, emb.node_count), seed)
    if trace:
        t = sgt_model.forward_tensor(ad.constant(pts))
        return ad.constant(emb.coords) @ t, t
    t = sgt_forward(sgt_model, pts)
    return emb.coords @ t.m, t


def _strategy_coords(subject: Subject, strategy: str, sgt_model: SgtModel | None,
                     n_subsample: int, seed: int):
    if strategy == "none":
        return subject.embedding.coords
    if strategy == "oracle":
        if subject.target is None:
            raise DataError("oracle targets not computed")
        return subject.target
    coords, _ = _predicted_coords(subject, sgt_model, n_subsample, seed)
    return coords


def evaluate_split(subjects: list[Subject], gcn_model: GcnModel, strategy: str,
                   sgt_model: SgtModel | None = None, n_subsample: int = 1000,
                   seed: int = 1234, classes: int = 32) -> list[dict]:
    """Per-subject metrics for one frozen model/strategy."""
    rows = []
    for s in subjects:
        coords = _strategy_coords(s, strategy, sgt_model, n_subsample, seed)
        probs = gcn_forward(gcn_model, coords, s.feature, s.src, s.dst).data
        pred = predict_labels(probs)
        _, mean_dice = dice_overlap(pred, s.labels, classes)
        rows.append({
            "subject": s.record.subject_id,
            "mean_dice": mean_dice,
            "accuracy": accuracy(pred, s.labels),
            "avg_hausdorff": avg_hausdorff(pred, s.labels, s.mesh, classes),
        })
    return rows


def mean_dice_of(rows: list[dict]) -> float:
    return float(np.mean([r["mean_dice"] for r in rows]))


def train_parcellation(subjects: list[Subject], strategy: str,
                       sgt_model: SgtModel | None = None,
                       gcn_seed: int = 0, epochs: int = 60, lr: float = 1e-3,
                       sgt_lr: float = 1e-6,
                       lam: float = 1.0, seed: int = 0, n_subsample: int = 1000,
                       optimizer: str = "adam", augment: bool = True,
                       sigma0: float = 100.0, include_self: bool = True,
                       classes: int = 32,
                       log_hook=None) -> tuple[GcnModel, SgtModel | None, list[dict]]:
    """Train the parcellation network under one alignment strategy.

    For `e2e` the aligner's parameters are updated jointly and gradients
    flow through the predicted transform into the GCN input coordinates.
    The best-validation-Dice parameters are restored before returning.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}")
    if strategy in ("pretrained", "e2e") and sgt_model is None:
        raise DataError(f"strategy {strategy!r} needs an aligner model")
    train = split_of(subjects, "train")
    val = split_of(subjects, "val")
    if not train:
        raise DataError("no training subjects")
    gcn_model = GcnModel.init(seed=gcn_seed, sigma0=sigma0,
                              include_self=include_self)
    gcn_opt = make_optimizer(optimizer, lr)
    # The aligner is fine-tuned with plain descent at a small step so the
    # joint loss cannot walk it off its warm-started readout, and its
    # per-point encoder stays frozen for the same reason it does in
    # train_sgt (the normalization amplifies encoder gradients ~1e4x).
    sgt_opt = make_optimizer("gd", sgt_lr) if strategy == "e2e" else None
    sgt_frozen = []
    if sgt_model is not None:
        for seg in ("pw1_w", "pw1_b", "pw2_w", "pw2_b"):
            if seg in sgt_model.store.segments:
                off, shape = sgt_model.store.segments[seg]
                sgt_frozen.append((off, off + int(np.prod(shape))))
    rng = np.random.default_rng(seed)
    logs = []
    best = (-1.0, None, None)
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        e_spt_terms, e_gcn_terms = [], []
        for idx in order:
            s = train[idx]
            emb = s.embedding
            flip_seed = int(rng.integers(2 ** 62))
            sub_seed = int(rng.integers(2 ** 62))
            use_augment = augment and strategy != "oracle"
            if use_augment:
                emb = random_sign_flip(emb, flip_seed)
            e_spt = None
            if strategy == "none":
                coords = ad.constant(emb.coords)
            elif strategy == "oracle":
                coords = ad.constant(s.target)
            else:
                coords, t = _predicted_coords(s, sgt_model, n_subsample,
                                              sub_seed, emb=emb,
                                              trace=(strategy == "e2e"))
                if strategy == "e2e":
                    data = ad.frobenius_sq(ad.constant(s.target) - coords)
                    ortho = ad.frobenius_sq(
                        t @ ad.transpose(t) - ad.constant(np.eye(3)))
                    e_spt = data + ortho
                else:
                    coords = ad.constant(coords)
            probs = gcn_forward(gcn_model, coords, s.feature, s.src, s.dst)
            e_gcn, _, _ = parcellation_loss(probs, s.labels)
            loss = e_gcn if e_spt is None else (e_spt * lam + e_gcn)
            if not np.isfinite(loss.item()):
                raise NumericError(f"training diverged at epoch {epoch}")
            loss.backward()
            gcn_opt.step(gcn_model.store)
            if sgt_opt is not None:
                for lo, hi in sgt_frozen:
                    sgt_model.store.grads[lo:hi] = 0.0
                sgt_opt.step(sgt_model.store)
            e_gcn_terms.append(e_gcn.item())
            e_spt_terms.append(e_spt.item() if e_spt is not None else 0.0)
        row = {
            "epoch": epoch,
            "mean_e_spt": float(np.mean(e_spt_terms)),
            "mean_e_gcn": float(np.mean(e_gcn_terms)),
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        if val:
            val_rows = evaluate_split(val, gcn_model, strategy, sgt_model,
                                      n_subsample, classes=classes)
            row["val_dice"] = mean_dice_of(val_rows)
            if row["val_dice"] > best[0]:
                best = (row["val_dice"], gcn_model.store.values.copy(),
                        sgt_model.store.values.copy() if sgt_model else None)
        logs.append(row)
        if log_hook:
            log_hook(row)
    if best[1] is not None:
        gcn_model.store.values[:] = best[1]
        if sgt_model is not None and best[2] is not None:
            sgt_model.store.values[:] = best[2]
    return gcn_model, sgt_model, logs


# -- experiment drivers -----------------------------------------------------


def train_aligner(subjects: list[Subject], seed: int = 0, epochs: int = 200,
                  lr: float = 1e-6, n_subsample: int = 1000, batch_size: int = 4,
                  ortho_only: bool = False, augment: bool = True,
                  optimizer: str = "gd", log_path: str | None = None,
                  checkpoint_path: str | None = None) -> SgtModel:
    """Train the transform network on the oracle targets of the train split."""
    train = split_of(subjects, "train")
    dataset = [(s.embedding, s.target) for s in train]
    if not ortho_only and any(t is None for _, t in dataset):
        raise DataError("oracle targets not computed")
    model = SgtModel.init(seed=seed)
    train_sgt(model, dataset, epochs=epochs, batch_size=batch_size, seed=seed,
              lr=lr, n_subsample=n_subsample, optimizer=optimizer,
              augment=augment, ortho_only=ortho_only, log_path=log_path,
              checkpoint_path=checkpoint_path)
    return model


def bench_alignment(subjects: list[Subject], reference: Subject,
                    sgt_model: SgtModel, n_subsample: int = 1000,
                    seed: int = 99, max_iter: int = 100,
                    tol: float = 1e-9) -> list[dict]:
    """Wall time of oracle alignment vs learned-transform inference, per subject."""
    rows = []
    for s in subjects:
        t0 = time.perf_counter()
        align_iterative(s.embedding, reference.embedding, max_iter=max_iter, tol=tol)
        oracle_ms = (time.perf_counter() - t0) * 1e3
        t0 = time.perf_counter()
        pts = subsample(s.embedding, min(n_subsample, s.embedding.node_count), seed)
        t = sgt_forward(sgt_model, pts)
        _ = s.embedding.coords @ t.m
        sgt_ms = (time.perf_counter() - t0) * 1e3
        rows.append({
            "subject": s.record.subject_id,
            "oracle_ms": oracle_ms,
            "sgt_ms": sgt_ms,
            "speedup": oracle_ms / sgt_ms,
        })
    return rows


def subsample_study(subjects: list[Subject], sizes: list[int], seed: int = 0,
                    epochs: int = 200, lr: float = 1e-6,
                    batch_size: int = 4) -> list[dict]:
    """Held-out alignment MSE of aligners trained with different input sizes."""
    test = split_of(subjects, "test")
    rows = []
    for size in sizes:
        model = train_aligner(subjects, seed=seed, epochs=epochs, lr=lr,
                              n_subsample=size, batch_size=batch_size)
        mses = []
        for s in test:
            coords, _ = _predicted_coords(s, model, size, seed=seed + 1)
            mses.append(target_mse(coords, s.target))
        rows.append({"n_points": size, "held_out_mse": float(np.mean(mses))})
    return rows


TABLE1_CONFIGS = ("no_alignment", "pretrained_orthogonal", "pretrained_mse",
                  "end_to_end", "oracle_alignment")


def run_table1(subjects: list[Subject], seed: int = 0,
               sgt_epochs: int = 200, gcn_epochs: int = 60,
               lr: float = 1e-3, sgt_lr: float = 1e-6,
               lam: float = 1.0, n_subsample: int = 1000,
               sigma0: float = 100.0, classes: int = 32,
               log_hook=None) -> list[dict]:
    """The five alignment-strategy comparisons, one summary row each."""
    test = split_of(subjects, "test")
    rows = []

    def finish(config, gcn_model, strategy, sgt_model):
        per_subject = evaluate_split(test, gcn_model, strategy, sgt_model,
                                     n_subsample, classes=classes)
        row = {
            "config": config,
            "mean_dice": mean_dice_of(per_subject),
            "accuracy": float(np.mean([r["accuracy"] for r in per_subject])),
            "avg_hausdorff": float(np.mean([r["avg_hausdorff"] for r in per_subject])),
        }
        rows.append(row)
        if log_hook:
            log_hook(row)

    common = dict(gcn_seed=seed, epochs=gcn_epochs, lr=lr, sgt_lr=sgt_lr,
                  seed=seed, n_subsample=n_subsample, sigma0=sigma0,
                  classes=classes)

    gcn_model, _, _ = train_parcellation(subjects, "none", **common)
    finish("no_alignment", gcn_model, "none", None)

    sgt_ortho = train_aligner(subjects, seed=seed, epochs=sgt_epochs, lr=sgt_lr,
                              n_subsample=n_subsample, ortho_only=True)
    gcn_model, _, _ = train_parcellation(subjects, "pretrained",
                                         sgt_model=sgt_ortho, **common)
    finish("pretrained_orthogonal", gcn_model, "pretrained", sgt_ortho)

    sgt_mse = train_aligner(subjects, seed=seed, epochs=sgt_epochs, lr=sgt_lr,
                            n_subsample=n_subsample)
    gcn_model, _, _ = train_parcellation(subjects, "pretrained",
                                         sgt_model=sgt_mse, **common)
    finish("pretrained_mse", gcn_model, "pretrained", sgt_mse)

    sgt_e2e = SgtModel(_clone_store(sgt_mse))
    gcn_model, sgt_e2e, _ = train_parcellation(subjects, "e2e",
                                               sgt_model=sgt_e2e, lam=lam,
                                               **common)
    finish("end_to_end", gcn_model, "e2e", sgt_e2e)

    gcn_model, _, _ = train_parcellation(subjects, "oracle", **common)
    finish("oracle_alignment", gcn_model, "oracle", None)
    return rows


def _clone_store(model: SgtModel):
    from .params import ParamStore
    store = ParamStore()
    store.values = model.store.values.copy()
    store.grads = np.zeros_like(store.values)
    store.segments = dict(model.store.segments)
    store._pending = {}
    store.extras = {k: v.copy() for k, v in model.store.extras.items()}
    return store
