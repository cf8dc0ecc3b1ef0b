"""Estimator-style wrappers: fit/transform/predict objects over the
functional core, for interactive use and quick composition.

Each estimator stores its hyperparameters as constructor arguments
(retrievable with get_params, modifiable with set_params) and exposes the
fitted state as trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np

from . import pipeline
from .align import Transform3, align_iterative, apply_transform
from .errors import DataError
from .gcn import gcn_forward, predict_labels
from .mesh import SurfaceMesh, build_adjacency, normalized_laplacian
from .sgt import SgtModel, sgt_forward, train_sgt
from .spectral import SpectralEmbedding, eigensolve_smallest, subsample


class _BaseEstimator:
    def get_params(self) -> dict:
        return {k: v for k, v in vars(self).items() if not k.endswith("_")}

    def set_params(self, **params) -> "_BaseEstimator":
        known = self.get_params()
        for key, value in params.items():
            if key not in known:
                raise DataError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class SpectralEmbedder(_BaseEstimator):
    """Mesh -> spectral coordinates of the k smallest nonzero eigenpairs."""

    def __init__(self, k: int = 3, tol: float = 1e-8, seed: int = 0):
        self.k = k
        self.tol = tol
        self.seed = seed

    def fit(self, mesh: SurfaceMesh) -> "SpectralEmbedder":
        lap = normalized_laplacian(build_adjacency(mesh))
        self.embedding_ = eigensolve_smallest(lap, k=self.k, tol=self.tol,
                                              seed=self.seed)
        return self

    def transform(self, mesh: SurfaceMesh) -> np.ndarray:
        return self.fit(mesh).embedding_.coords

    def fit_transform(self, mesh: SurfaceMesh) -> np.ndarray:
        return self.transform(mesh)


class IterativeAligner(_BaseEstimator):
    """Aligns embeddings onto a reference with the iterative oracle."""

    def __init__(self, max_iter: int = 100, tol: float = 1e-9):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, reference: SpectralEmbedding) -> "IterativeAligner":
        self.reference_ = reference
        return self

    def predict(self, emb: SpectralEmbedding) -> Transform3:
        if not hasattr(self, "reference_"):
            raise DataError("fit a reference embedding first")
        result = align_iterative(emb, self.reference_, max_iter=self.max_iter,
                                 tol=self.tol)
        self.result_ = result
        return result.transform

    def transform(self, emb: SpectralEmbedding) -> np.ndarray:
        return apply_transform(emb, self.predict(emb)).coords


class SgtAligner(_BaseEstimator):
    """Learned alignment: trains the transform network on oracle targets.

    fit takes (embedding, oracle-aligned coordinates) pairs; predict maps an
    embedding to its 3x3 transform, transform applies it to the coordinates.
    """

    def __init__(self, epochs: int = 200, batch_size: int = 4, seed: int = 0,
                 lr: float = 1e-6, n_subsample: int = 1000,
                 optimizer: str = "gd", augment: bool = True):
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.lr = lr
        self.n_subsample = n_subsample
        self.optimizer = optimizer
        self.augment = augment

    def fit(self, pairs: list[tuple[SpectralEmbedding, np.ndarray]]) -> "SgtAligner":
        self.model_ = SgtModel.init(seed=self.seed)
        self.log_ = train_sgt(self.model_, pairs, epochs=self.epochs,
                              batch_size=self.batch_size, seed=self.seed,
                              lr=self.lr, n_subsample=self.n_subsample,
                              optimizer=self.optimizer, augment=self.augment)
        return self

    def predict(self, emb: SpectralEmbedding) -> Transform3:
        if not hasattr(self, "model_"):
            raise DataError("fit the aligner first")
        pts = subsample(emb, min(self.n_subsample, emb.node_count),
                        self.seed + 1)
        return sgt_forward(self.model_, pts)

    def transform(self, emb: SpectralEmbedding) -> np.ndarray:
        return apply_transform(emb, self.predict(emb)).coords


class GcnParcellator(_BaseEstimator):
    """Parcellation network over aligned coordinates plus a scalar feature.

    fit consumes pipeline.Subject records (with targets attached when the
    strategy needs them); predict labels one subject's mesh.
    """

    def __init__(self, strategy: str = "oracle", epochs: int = 60,
                 lr: float = 1e-3, lam: float = 1.0, seed: int = 0,
                 n_subsample: int = 1000, classes: int = 32,
                 sigma0: float = 100.0):
        self.strategy = strategy
        self.epochs = epochs
        self.lr = lr
        self.lam = lam
        self.seed = seed
        self.n_subsample = n_subsample
        self.classes = classes
        self.sigma0 = sigma0

    def fit(self, subjects: list, sgt_model: SgtModel | None = None) -> "GcnParcellator":
        gcn, sgt, self.log_ = pipeline.train_parcellation(
            subjects, self.strategy, sgt_model=sgt_model, gcn_seed=self.seed,
            epochs=self.epochs, lr=self.lr, lam=self.lam, seed=self.seed,
            n_subsample=self.n_subsample, classes=self.classes,
            sigma0=self.sigma0)
        self.model_ = gcn
        self.sgt_model_ = sgt
        return self

    def predict(self, subject) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise DataError("fit the parcellator first")
        coords = pipeline._strategy_coords(subject, self.strategy,
                                           self.sgt_model_, self.n_subsample,
                                           self.seed + 1)
        probs = gcn_forward(self.model_, coords, subject.feature,
                            subject.src, subject.dst).data
        return predict_labels(probs)
