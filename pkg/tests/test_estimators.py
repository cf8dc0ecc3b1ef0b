import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import embed_mesh, small_mesh
from spectralign.errors import DataError
from spectralign.estimators import (IterativeAligner, SgtAligner,
                                    SpectralEmbedder)
from spectralign.spectral import SpectralEmbedding


def test_spectral_embedder_matches_function():
    mesh = small_mesh(subdivisions=2)
    est = SpectralEmbedder(k=3)
    coords = est.fit_transform(mesh)
    assert np.array_equal(coords, embed_mesh(mesh).coords)
    assert est.embedding_.k == 3


def test_get_set_params():
    est = SpectralEmbedder(k=3)
    assert est.get_params() == {"k": 3, "tol": 1e-8, "seed": 0}
    est.set_params(k=2)
    assert est.k == 2
    with pytest.raises(DataError):
        est.set_params(nope=1)


def test_iterative_aligner_recovers_transform():
    emb = embed_mesh(small_mesh(subdivisions=2))
    q = ortho_group.rvs(3, random_state=21)
    moved = SpectralEmbedding(emb.coords @ q, emb.eigenvalues)
    aligner = IterativeAligner().fit(emb)
    t = aligner.predict(moved)
    assert np.linalg.norm(t.m - q.T) <= 1e-6
    assert np.linalg.norm(aligner.transform(moved) - emb.coords) <= 1e-6


def test_iterative_aligner_requires_fit():
    emb = embed_mesh(small_mesh(subdivisions=2))
    with pytest.raises(DataError):
        IterativeAligner().predict(emb)


def test_sgt_aligner_fits_identity_pair():
    emb = embed_mesh(small_mesh(subdivisions=2))
    est = SgtAligner(epochs=5, batch_size=1, n_subsample=100)
    est.fit([(emb, emb.coords.copy())])
    t = est.predict(emb)
    assert t.m.shape == (3, 3)
    out = est.transform(emb)
    assert np.abs(out - emb.coords).max() <= 1e-2
