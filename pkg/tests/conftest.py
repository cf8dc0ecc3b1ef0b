"""Shared fixtures: small meshes and the 30-subject benchmark cohort.

The cohort fixtures are session-scoped because dataset generation plus
oracle alignment takes about a minute and several acceptance criteria
reuse the same cohort.
"""

import numpy as np
import pytest

from spectralign import pipeline
from spectralign.mesh import SurfaceMesh, build_adjacency, normalized_laplacian
from spectralign.spectral import eigensolve_smallest
from spectralign.synthetic import icosphere, make_dataset, make_deformed_sphere

BENCH_SEED = 0


def small_mesh(subdivisions: int = 1, seed: int = 3) -> SurfaceMesh:
    return make_deformed_sphere(subdivisions, seed, amplitude=0.1,
                                axes=(1.0, 0.8, 0.6))


def embed_mesh(mesh: SurfaceMesh, seed: int = 0):
    lap = normalized_laplacian(build_adjacency(mesh))
    return eigensolve_smallest(lap, k=3, seed=seed)


@pytest.fixture(scope="session")
def tetra_mesh() -> SurfaceMesh:
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    return SurfaceMesh(vertices, faces)


@pytest.fixture(scope="session")
def icosphere_mesh() -> SurfaceMesh:
    v, f = icosphere(2)
    return SurfaceMesh(v, f)


@pytest.fixture(scope="session")
def cohort_dir(tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("cohort")
    make_dataset(30, BENCH_SEED, str(out))
    return str(out / "manifest.txt")


@pytest.fixture(scope="session")
def cohort(cohort_dir):
    subjects = pipeline.load_subjects(cohort_dir)
    reference = pipeline.pick_reference(subjects)
    pipeline.compute_oracle_targets(subjects, reference)
    return subjects, reference
