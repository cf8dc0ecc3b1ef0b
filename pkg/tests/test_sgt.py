import numpy as np
import pytest

from conftest import embed_mesh, small_mesh
from spectralign import autodiff as ad
from spectralign.align import Transform3
from spectralign.errors import DataError
from spectralign.params import load_checkpoint, save_checkpoint
from spectralign.sgt import (SgtModel, fit_pool_stats, sgt_forward, sgt_loss,
                             train_sgt, warm_start_head)
from spectralign.spectral import SpectralEmbedding, subsample


def fixed_points(seed=0, n=200):
    return np.random.default_rng(seed).normal(size=(n, 3))


def test_permutation_invariance():
    model = SgtModel.init(seed=1)
    pts = fixed_points()
    perm = np.random.default_rng(5).permutation(len(pts))
    a = sgt_forward(model, pts).m
    b = sgt_forward(model, pts[perm]).m
    assert np.linalg.norm(a - b) <= 1e-12


def test_zero_parameters_zero_transform():
    model = SgtModel.init(seed=0)
    model.store.values[:] = 0.0
    t = sgt_forward(model, fixed_points())
    assert np.array_equal(t.m, np.zeros((3, 3)))
    # and the penalty alone equals ||-I||_F^2 = 3
    emb = fixed_points(1, 50)
    loss, data, ortho = sgt_loss(model, emb, emb @ np.eye(3), emb)
    assert ortho == pytest.approx(3.0)


def test_sign_flip_equivariance():
    # flipping input column signs maps the prediction through the same signs
    model = SgtModel.init(seed=2)
    pts = fixed_points(3)
    signs = np.diag([1.0, -1.0, -1.0])
    a = sgt_forward(model, pts).m
    b = sgt_forward(model, pts @ signs).m
    assert np.linalg.norm(signs @ b - a) <= 1e-12


def test_loss_closed_forms():
    model = SgtModel.init(seed=0)
    coords = fixed_points(4, 80)

    orig = model.forward_tensor

    def forced(points, t=np.eye(3)):
        return ad.constant(t)

    model.forward_tensor = lambda points: ad.constant(np.eye(3))
    loss, data, ortho = sgt_loss(model, coords, coords.copy(), coords)
    assert loss.item() == pytest.approx(0.0)
    model.forward_tensor = lambda points: ad.constant(2.0 * np.eye(3))
    _, _, ortho = sgt_loss(model, coords, coords.copy(), coords)
    assert ortho == pytest.approx(27.0)
    model.forward_tensor = orig


def test_loss_shape_mismatch():
    model = SgtModel.init(seed=0)
    with pytest.raises(DataError):
        sgt_loss(model, fixed_points(0, 10), fixed_points(0, 11), fixed_points(0, 10))


def test_forward_golden_fixture():
    # recorded at the first verified run; guards numeric drift
    model = SgtModel.init(seed=0)
    pts = fixed_points(1234, 100)
    t = sgt_forward(model, pts).m
    golden = np.array([
        [0.0427321302626772, -0.11520050560860615, -0.019658400931823725],
        [0.02892975780015267, 0.15384692229066935, -0.035134320242247594],
        [-0.012860098488661702, 0.10581997076847206, -0.051594409416309925],
    ])
    assert np.allclose(t, golden, rtol=0, atol=1e-15)


def test_checkpoint_preserves_prediction(tmp_path):
    model = SgtModel.init(seed=3)
    emb = embed_mesh(small_mesh(subdivisions=2))
    fit_pool_stats(model, [(emb, emb.coords)])
    path = tmp_path / "sgt.ckpt"
    save_checkpoint(model.store, str(path))
    again = SgtModel(load_checkpoint(str(path)))
    pts = subsample(emb, 100, seed=0)
    assert np.array_equal(sgt_forward(model, pts).m, sgt_forward(again, pts).m)


def test_training_smoke_single_pair():
    emb = embed_mesh(small_mesh(subdivisions=2))
    model = SgtModel.init(seed=0)
    rows = train_sgt(model, [(emb, emb.coords.copy())], epochs=20,
                     batch_size=1, n_subsample=200, seed=0)
    assert rows[-1]["mean_data_term"] + rows[-1]["mean_ortho_term"] <= 1e-3
    assert all(np.isfinite(r["mean_data_term"]) for r in rows)


def test_subsample_stability_after_training():
    emb = embed_mesh(small_mesh(subdivisions=2))
    model = SgtModel.init(seed=0)
    train_sgt(model, [(emb, emb.coords.copy())], epochs=5, batch_size=1,
              n_subsample=100, seed=0)
    t1 = sgt_forward(model, subsample(emb, 100, seed=1)).m
    t2 = sgt_forward(model, subsample(emb, 100, seed=2)).m
    assert np.linalg.norm(t1 - t2) <= 0.2
