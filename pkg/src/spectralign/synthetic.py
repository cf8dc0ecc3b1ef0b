"""Deterministic synthetic cohorts: deformed spheres with shared parcels.

Each subject is an icosphere displaced radially by seeded smooth bumps.
All subjects share the same vertex/face combinatorics, so the parcel
labeling computed once on the base sphere transfers node-for-node to every
subject, mimicking a consistently labeled cohort. A curvature-like scalar
(local edge-length deviation) stands in for a measured per-node feature.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .errors import DataError
from .mesh import SurfaceMesh, save_labels, save_mesh, save_scalars

N_BUMPS = 8
SUBJECT_BUMPS = 2
MIN_PARCEL_SHARE = 0.005

# Shared gross shape of every generated cohort. Pure spheres embed to a
# spectrally round point cloud in which tangential rotations are invisible
# to alignment; distinct semi-axes separate the low eigenvalues and make
# the alignment problem well-posed, the way gross anatomy does for brains.
# The shared base bumps break the remaining reflection symmetries so the
# axis-sign ambiguity is detectable from the cloud alone.
DEFAULT_AXES = (1.0, 0.7, 0.45)

# Fixed low-order asymmetry of the shared shape, applied with the base bump
# field. Random bump fields can leave an axis nearly mirror-symmetric, which
# makes the orientation of that spectral axis unidentifiable from the cloud;
# a slight egg shape along each semi-axis pins all three orientations.
BASE_SKEW = (0.4, 0.5, 0.3)
DEFAULT_BASE_SEED = 1234567
DEFAULT_BASE_AMPLITUDE = 0.25


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere with 10*4^s + 2 vertices; deterministic ordering."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts / np.linalg.norm(verts[0]))
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, np.asarray(faces, dtype=np.int64)


def _bump_field(unit_vertices: np.ndarray, seed: int,
                n_bumps: int = N_BUMPS) -> np.ndarray:
    """Smooth low-frequency field on the unit sphere, normalized to max |.| = 1."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    widths = rng.uniform(0.4, 0.9, size=n_bumps)
    amps = rng.uniform(-1.0, 1.0, size=n_bumps)
    field = np.zeros(len(unit_vertices))
    for c, w, a in zip(centers, widths, amps):
        d2 = ((unit_vertices - c) ** 2).sum(axis=1)
        field += a * np.exp(-d2 / (2 * w * w))
    return field / max(np.abs(field).max(), 1e-12)


def make_deformed_sphere(subdivisions: int, deform_seed: int,
                         amplitude: float = 0.15,
                         axes: tuple = (1.0, 1.0, 1.0),
                         base_seed: int | None = None,
                         base_amplitude: float = 0.0,
                         n_bumps: int = SUBJECT_BUMPS) -> SurfaceMesh:
    """Icosphere displaced radially by seeded smooth bumps.

    An optional second bump field (base_seed/base_amplitude) models shape
    shared by a whole cohort; the deform_seed field is the individual
    variation on top of it. Both default off, giving an exact icosphere at
    amplitude 0. The shared field uses more bumps than the per-subject one
    so the cohort has rich common structure but few individual degrees of
    freedom, which keeps the cloud-to-transform map learnable from a small
    training split.
    """
    if subdivisions > 7:
        raise DataError("subdivisions > 7 not supported")
    v, f = icosphere(subdivisions)
    radius = np.ones(len(v))
    if base_amplitude != 0.0 and base_seed is not None:
        radius += base_amplitude * (_bump_field(v, base_seed, N_BUMPS)
                                    + v @ np.asarray(BASE_SKEW))
    if amplitude != 0.0:
        radius += amplitude * _bump_field(v, deform_seed, n_bumps)
    return SurfaceMesh(v * radius[:, None] * np.asarray(axes, dtype=np.float64), f)


def edge_length_feature(mesh: SurfaceMesh) -> np.ndarray:
    """Per-node mean incident edge length, centered: a cheap curvature proxy."""
    e = mesh.edges()
    length = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    total = np.zeros(mesh.n_vertices)
    count = np.zeros(mesh.n_vertices)
    np.add.at(total, e[:, 0], length)
    np.add.at(total, e[:, 1], length)
    np.add.at(count, e[:, 0], 1.0)
    np.add.at(count, e[:, 1], 1.0)
    local = total / np.maximum(count, 1.0)
    return local - local.mean()


def _geodesic_graph(mesh: SurfaceMesh) -> sp.csr_matrix:
    e = mesh.edges()
    length = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    return sp.csr_matrix(
        (np.concatenate([length, length]),
         (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )


def make_parcels(mesh: SurfaceMesh, count: int = 32, seed: int = 0,
                 return_seeds: bool = False):
    """Geodesic-Voronoi parcels from farthest-point-sampled seeds."""
    n = mesh.n_vertices
    if count > n:
        raise DataError(f"cannot place {count} parcels on {n} vertices")
    graph = _geodesic_graph(mesh)
    rng = np.random.default_rng(seed)
    seeds = [int(rng.integers(n))]
    dists = [csgraph.dijkstra(graph, indices=seeds[0])]
    min_dist = dists[0].copy()
    for _ in range(count - 1):
        nxt = int(np.argmax(min_dist))
        seeds.append(nxt)
        d = csgraph.dijkstra(graph, indices=nxt)
        dists.append(d)
        min_dist = np.minimum(min_dist, d)
    labels = np.argmin(np.vstack(dists), axis=0).astype(np.int64)
    counts = np.bincount(labels, minlength=count)
    if (counts == 0).any():
        raise DataError("empty parcel generated")
    if counts.min() < MIN_PARCEL_SHARE * n:
        raise DataError(f"parcel too small: {counts.min()} of {n} nodes")
    if return_seeds:
        return labels, np.asarray(seeds, dtype=np.int64)
    return labels


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    mesh_path: str
    label_path: str
    feature_path: str
    split: str  # train | val | test


def make_dataset(n_subjects: int, seed: int, out_dir: str,
                 subdivisions: int = 3, amplitude: float = 0.05,
                 parcel_count: int = 32, axes: tuple = DEFAULT_AXES,
                 base_seed: int = DEFAULT_BASE_SEED,
                 base_amplitude: float = DEFAULT_BASE_AMPLITUDE) -> list[SubjectRecord]:
    """Generate a labeled cohort and write its manifest to out_dir.

    Subjects share the gross shape (semi-axes plus a fixed bump field) and
    the parcel labeling (same vertex ids on the common parameterization);
    a smaller bump deformation is seeded per subject.
    """
    if n_subjects < 10:
        raise DataError("need at least 10 subjects for a 70-10-20 split")
    os.makedirs(out_dir, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    parcel_seed, split_seed, *subject_seeds = ss.spawn(n_subjects + 2)

    base = make_deformed_sphere(subdivisions, 0, amplitude=0.0, axes=axes,
                                base_seed=base_seed, base_amplitude=base_amplitude)
    labels = make_parcels(base, parcel_count,
                          seed=int(parcel_seed.generate_state(1)[0]))

    n_train = int(0.7 * n_subjects)
    n_val = int(0.1 * n_subjects)
    order = np.random.default_rng(split_seed).permutation(n_subjects)
    split_of = {}
    for rank, subj in enumerate(order):
        split_of[subj] = ("train" if rank < n_train
                          else "val" if rank < n_train + n_val else "test")

    records = []
    for i in range(n_subjects):
        sid = f"subject{i:03d}"
        mesh = make_deformed_sphere(
            subdivisions, int(subject_seeds[i].generate_state(1)[0]), amplitude,
            axes, base_seed=base_seed, base_amplitude=base_amplitude)
        mesh_path = os.path.join(out_dir, f"{sid}.off")
        label_path = os.path.join(out_dir, f"{sid}.labels.txt")
        feat_path = os.path.join(out_dir, f"{sid}.feature.txt")
        save_mesh(mesh, mesh_path)
        save_labels(labels, label_path)
        save_scalars(edge_length_feature(mesh), feat_path)
        records.append(SubjectRecord(sid, f"{sid}.off", f"{sid}.labels.txt",
                                     f"{sid}.feature.txt", split_of[i]))
    save_manifest(records, os.path.join(out_dir, "manifest.txt"))
    return records


def save_manifest(records: list[SubjectRecord], path: str) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.subject_id} {r.mesh_path} {r.label_path} "
                     f"{r.feature_path} {r.split}\n")


def load_manifest(path: str) -> list[SubjectRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split()
            if len(toks) != 5 or toks[4] not in ("train", "val", "test"):
                raise DataError(f"{path}:{lineno}: bad manifest line")
            records.append(SubjectRecord(*toks))
    return records
