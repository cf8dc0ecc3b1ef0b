import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import embed_mesh, small_mesh
from spectralign.align import (Transform3, align_iterative, apply_transform,
                               load_transform, nearest_correspondence,
                               procrustes_step, save_transform)
from spectralign.errors import DataError
from spectralign.spectral import SpectralEmbedding


def random_embedding(seed, n=120):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(n, 3)) * np.array([1.0, 0.6, 0.3])
    return SpectralEmbedding(coords, np.array([1.0, 2.0, 3.0]))


def test_transform_validation():
    with pytest.raises(DataError):
        Transform3(np.eye(2))
    t = Transform3(np.eye(3))
    assert t.orthogonality_defect() == 0.0


def test_procrustes_closed_form():
    # known rotation, identity correspondence
    emb = random_embedding(0)
    q = ortho_group.rvs(3, random_state=4)
    t = procrustes_step(emb.coords @ q, emb.coords, np.arange(emb.node_count))
    assert np.linalg.norm(t.m - q.T) <= 1e-12
    assert t.orthogonality_defect() <= 1e-12


def test_nearest_correspondence_brute_vs_tree():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(400, 3))
    b = rng.normal(size=(500, 3))
    idx = nearest_correspondence(a, b)  # tree path (above brute-force limit)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(idx, np.argmin(d2, axis=1))


def test_align_recovers_orthogonal_transform():
    emb = embed_mesh(small_mesh(subdivisions=2))
    q = ortho_group.rvs(3, random_state=9)
    moved = SpectralEmbedding(emb.coords @ q, emb.eigenvalues)
    result = align_iterative(moved, emb)
    assert np.linalg.norm(result.transform.m - q.T) <= 1e-6
    aligned = apply_transform(moved, result.transform)
    assert np.linalg.norm(aligned.coords - emb.coords) <= 1e-6


def test_align_recovers_reflection():
    emb = embed_mesh(small_mesh(subdivisions=2))
    flip = np.diag([1.0, -1.0, 1.0])
    moved = SpectralEmbedding(emb.coords @ flip, emb.eigenvalues)
    result = align_iterative(moved, emb)
    assert np.linalg.norm(result.transform.m - flip) <= 1e-6
    assert np.linalg.det(result.transform.m) == pytest.approx(-1.0, abs=1e-9)


def test_idempotence_at_fixpoint():
    emb = embed_mesh(small_mesh(subdivisions=2))
    result = align_iterative(emb, emb)
    assert np.linalg.norm(result.transform.m - np.eye(3)) <= 1e-6


def test_residual_history_monotone():
    emb = embed_mesh(small_mesh(subdivisions=2))
    q = ortho_group.rvs(3, random_state=13)
    moved = SpectralEmbedding(emb.coords @ q, emb.eigenvalues)
    result = align_iterative(moved, emb)
    h = np.array(result.history)
    assert (np.diff(h) <= h[:-1] * 1e-12 + 1e-15).all()
    assert result.residual == h[-1]


def test_save_load_transform(tmp_path):
    emb = embed_mesh(small_mesh(subdivisions=2))
    result = align_iterative(emb, emb)
    path = tmp_path / "t.t3"
    save_transform(result, str(path))
    again = load_transform(str(path))
    assert np.allclose(again.transform.m, result.transform.m)
    assert again.residual == pytest.approx(result.residual)
    assert again.iterations == result.iterations
