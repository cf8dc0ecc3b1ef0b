import numpy as np
import pytest

from spectralign.errors import DataError
from spectralign.mesh import (SurfaceMesh, build_adjacency, load_labels,
                              load_mesh, load_scalars, normalized_laplacian,
                              save_labels, save_mesh, save_scalars)


def test_tetra_edges(tetra_mesh):
    edges = tetra_mesh.edges()
    assert len(edges) == 6
    assert (edges[:, 0] < edges[:, 1]).all()


def test_adjacency_inverse_distance_weights(tetra_mesh):
    adj = build_adjacency(tetra_mesh).to_dense()
    assert np.array_equal(adj, adj.T)
    assert np.array_equal(np.diag(adj), np.zeros(4))
    edges = tetra_mesh.edges()
    for i, j in edges:
        d = np.linalg.norm(tetra_mesh.vertices[i] - tetra_mesh.vertices[j])
        assert adj[i, j] == pytest.approx(1.0 / d)


def test_degenerate_face_rejected():
    vertices = np.zeros((3, 3))
    vertices[1, 0] = 1.0
    vertices[2, 1] = 1.0
    with pytest.raises(DataError):
        SurfaceMesh(vertices, np.array([[0, 1, 1]]))


def test_out_of_range_face_rejected():
    vertices = np.eye(3)
    with pytest.raises(DataError):
        SurfaceMesh(vertices, np.array([[0, 1, 3]]))


def test_laplacian_properties(icosphere_mesh):
    lap = normalized_laplacian(build_adjacency(icosphere_mesh))
    dense = lap.to_dense()
    assert np.allclose(dense, dense.T)
    assert np.allclose(np.diag(dense), 1.0)
    evals = np.linalg.eigvalsh(dense)
    assert evals.min() > -1e-10
    assert evals.max() < 2.0 + 1e-10
    # the trivial eigenvector D^(1/2) * ones
    deg = build_adjacency(icosphere_mesh).degrees()
    v0 = np.sqrt(deg)
    assert np.linalg.norm(dense @ v0) <= 1e-10 * np.linalg.norm(v0)


def test_off_roundtrip(tmp_path, icosphere_mesh):
    path = tmp_path / "sphere.off"
    save_mesh(icosphere_mesh, str(path))
    again = load_mesh(str(path))
    assert np.allclose(again.vertices, icosphere_mesh.vertices)
    assert np.array_equal(again.faces, icosphere_mesh.faces)


def test_ply_roundtrip(tmp_path, tetra_mesh):
    path = tmp_path / "tetra.ply"
    save_mesh(tetra_mesh, str(path))
    again = load_mesh(str(path))
    assert np.allclose(again.vertices, tetra_mesh.vertices)
    assert np.array_equal(again.faces, tetra_mesh.faces)


def test_bad_off_reports_line(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\nnot a number 0\n3 0 1 2\n")
    with pytest.raises(DataError):
        load_mesh(str(path))


def test_labels_roundtrip(tmp_path):
    labels = np.array([0, 3, 1, 2])
    path = tmp_path / "l.txt"
    save_labels(labels, str(path))
    assert np.array_equal(load_labels(str(path), 4), labels)
    with pytest.raises(DataError):
        load_labels(str(path), 5)


def test_scalars_roundtrip(tmp_path):
    values = np.array([0.25, -1.5, 3.0])
    path = tmp_path / "s.txt"
    save_scalars(values, str(path))
    assert np.allclose(load_scalars(str(path), 3), values)
