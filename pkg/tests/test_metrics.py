import numpy as np
import pytest

from spectralign.errors import DataError
from spectralign.metrics import accuracy, avg_hausdorff, dice_overlap
from spectralign.mesh import SurfaceMesh
from spectralign.synthetic import icosphere


def test_dice_identical():
    labels = np.array([0, 1, 1, 2, 2, 2])
    per_class, mean = dice_overlap(labels, labels, classes=3)
    assert mean == 1.0
    assert np.allclose(per_class, 1.0)


def test_dice_disjoint_class():
    pred = np.array([0, 0, 1, 1])
    truth = np.array([1, 1, 0, 0])
    per_class, mean = dice_overlap(pred, truth, classes=2)
    assert per_class[0] == 0.0 and per_class[1] == 0.0
    assert mean == 0.0


def test_dice_half_overlap():
    # pred covers exactly half of truth, equal sizes -> 0.5
    pred = np.array([0, 0, 1, 1, 2, 2])
    truth = np.array([0, 1, 1, 0, 2, 2])
    per_class, _ = dice_overlap(pred, truth, classes=3)
    assert per_class[0] == 0.5
    assert per_class[1] == 0.5
    assert per_class[2] == 1.0


def test_dice_absent_class_excluded():
    pred = np.array([0, 0])
    truth = np.array([0, 0])
    per_class, mean = dice_overlap(pred, truth, classes=5)
    assert mean == 1.0
    assert np.isnan(per_class[1:]).all()


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0
    assert accuracy([0, 1, 1, 1], [0, 1, 1, 0]) == 0.75


def test_length_mismatch():
    with pytest.raises(DataError):
        accuracy([0, 1], [0])
    with pytest.raises(DataError):
        dice_overlap([0, 1], [0], classes=2)


def test_hausdorff_identical_zero(icosphere_mesh):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=icosphere_mesh.n_vertices)
    assert avg_hausdorff(labels, labels, icosphere_mesh, classes=4) == 0.0


def test_hausdorff_symmetry(icosphere_mesh):
    rng = np.random.default_rng(1)
    a = rng.integers(0, 4, size=icosphere_mesh.n_vertices)
    b = rng.integers(0, 4, size=icosphere_mesh.n_vertices)
    lhs = avg_hausdorff(a, b, icosphere_mesh, classes=4)
    rhs = avg_hausdorff(b, a, icosphere_mesh, classes=4)
    assert abs(lhs - rhs) <= 1e-12


def test_relabeling_invariance(icosphere_mesh):
    rng = np.random.default_rng(2)
    pred = rng.integers(0, 4, size=icosphere_mesh.n_vertices)
    truth = rng.integers(0, 4, size=icosphere_mesh.n_vertices)
    perm = np.array([2, 3, 0, 1])
    _, mean_a = dice_overlap(pred, truth, classes=4)
    _, mean_b = dice_overlap(perm[pred], perm[truth], classes=4)
    assert mean_a == pytest.approx(mean_b)
    assert accuracy(pred, truth) == pytest.approx(accuracy(perm[pred], perm[truth]))
    h_a = avg_hausdorff(pred, truth, icosphere_mesh, classes=4)
    h_b = avg_hausdorff(perm[pred], perm[truth], icosphere_mesh, classes=4)
    assert h_a == pytest.approx(h_b)


def one_ring_fixture():
    """Cap around a pole vs the same cap grown by one edge ring."""
    v, f = icosphere(3)
    mesh = SurfaceMesh(v, f)
    truth = (v[:, 2] > 0.55).astype(np.int64)
    edges = mesh.edges()
    pred = truth.copy()
    inside = truth == 1
    touches = inside[edges[:, 0]] | inside[edges[:, 1]]
    pred[edges[touches, 0]] = 1
    pred[edges[touches, 1]] = 1
    return mesh, pred, truth


def test_hausdorff_one_ring_shift_near_edge_length():
    mesh, pred, truth = one_ring_fixture()
    edges = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[edges[:, 0]]
                             - mesh.vertices[edges[:, 1]], axis=1)
    d = avg_hausdorff(pred, truth, mesh, classes=2)
    assert abs(d - lengths.mean()) <= 0.15 * lengths.mean()
