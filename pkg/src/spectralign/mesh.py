"""Triangle meshes as graphs: OFF/PLY loading, adjacency and normalized Laplacian.

A mesh is treated purely as a weighted graph. Edge weights between adjacent
vertices are the inverse of their Euclidean distance, so the adjacency (and
hence the Laplacian) is invariant under rigid motions of the vertex set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError

# Adjacent vertices closer than this are rejected rather than clamped:
# a near-zero distance would inject a huge weight into the Laplacian.
COINCIDENT_DISTANCE = 1e-12


@dataclass(frozen=True)
class SurfaceMesh:
    """Immutable triangle mesh: vertex coordinates, faces, optional scalar feature."""

    vertices: np.ndarray          # (N, 3) float64
    faces: np.ndarray             # (F, 3) int64, each row three distinct indices
    node_feature: np.ndarray | None = field(default=None)  # (N,) float64

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DataError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise DataError(f"faces must be (F, 3), got {f.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise DataError(
                    f"face index out of range: max index {f.max()}, "
                    f"{len(v)} vertices"
                )
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise DataError(f"degenerate face at row {int(np.argmax(degenerate))}")
        if self.node_feature is not None:
            nf = np.asarray(self.node_feature, dtype=np.float64).ravel()
            if len(nf) != len(v):
                raise DataError("node_feature length does not match vertex count")
            object.__setattr__(self, "node_feature", nf)
        v.setflags(write=False)
        f.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2) with i < j, lexicographically sorted."""
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


class SparseSymmetric:
    """Sparse symmetric matrix stored once per unordered pair plus diagonal.

    Entries with value exactly zero are dropped. Symmetry holds by
    construction: off-diagonal entries are keyed by (min(i,j), max(i,j)).
    """

    def __init__(self, dimension: int, rows, cols, values):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        lo = np.minimum(rows, cols)
        hi = np.maximum(rows, cols)
        keep = values != 0.0
        lo, hi, values = lo[keep], hi[keep], values[keep]
        order = np.lexsort((hi, lo))
        lo, hi, values = lo[order], hi[order], values[order]
        if len(lo) > 1:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if dup.any():
                raise DataError("duplicate entry for an unordered pair")
        if len(lo) and (lo.min() < 0 or hi.max() >= dimension):
            raise DataError("entry index out of range")
        self.dimension = int(dimension)
        self.rows = lo
        self.cols = hi
        self.values = values

    @property
    def stored_count(self) -> int:
        return len(self.values)

    def to_csr(self) -> sp.csr_matrix:
        """Full (both triangles) CSR view for numeric work."""
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return sp.csr_matrix((v, (r, c)), shape=(self.dimension, self.dimension))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr() @ x

    def degrees(self) -> np.ndarray:
        """Row sums of the full matrix."""
        d = np.zeros(self.dimension)
        np.add.at(d, self.rows, self.values)
        off = self.rows != self.cols
        np.add.at(d, self.cols[off], self.values[off])
        return d


def build_adjacency(mesh: SurfaceMesh) -> SparseSymmetric:
    """Weighted adjacency with weight 1/distance per mesh edge, zero diagonal."""
    e = mesh.edges()
    d = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    bad = d < COINCIDENT_DISTANCE
    if bad.any():
        i, j = e[np.argmax(bad)]
        raise DataError(f"coincident adjacent vertices {i} and {j}")
    return SparseSymmetric(mesh.n_vertices, e[:, 0], e[:, 1], 1.0 / d)


def normalized_laplacian(adj: SparseSymmetric) -> SparseSymmetric:
    """L = I - D^(-1/2) A D^(-1/2); unit diagonal, eigenvalues in [0, 2]."""
    deg = adj.degrees()
    if (deg <= 0).any():
        raise DataError(f"isolated vertex {int(np.argmin(deg > 0))} has zero degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    off = adj.rows != adj.cols
    r, c, v = adj.rows[off], adj.cols[off], adj.values[off]
    n = adj.dimension
    rows = np.concatenate([np.arange(n), r])
    cols = np.concatenate([np.arange(n), c])
    vals = np.concatenate([np.ones(n), -v * inv_sqrt[r] * inv_sqrt[c]])
    return SparseSymmetric(n, rows, cols, vals)


def _parse_error(path, lineno, msg):
    return DataError(f"{path}:{lineno}: {msg}")


def _data_lines(text):
    """Yield (lineno, stripped line) skipping blanks and '#' comments."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _load_off(path: str) -> SurfaceMesh:
    with open(path) as fh:
        lines = list(_data_lines(fh.read()))
    if not lines:
        raise _parse_error(path, 1, "empty OFF file")
    it = iter(lines)
    lineno, header = next(it)
    if header != "OFF":
        raise _parse_error(path, lineno, f"expected 'OFF' header, got {header!r}")
    try:
        lineno, counts = next(it)
        nv, nf, _ = (int(tok) for tok in counts.split())
    except (StopIteration, ValueError):
        raise _parse_error(path, lineno, "bad counts line") from None
    vertices = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, line = next(it)
            vertices[i] = [float(t) for t in line.split()]
        except (StopIteration, ValueError):
            raise _parse_error(path, lineno, f"bad vertex line {i}") from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            lineno, line = next(it)
            toks = [int(t) for t in line.split()]
            if toks[0] != 3 or len(toks) != 4:
                raise ValueError
            faces[i] = toks[1:]
        except (StopIteration, ValueError):
            raise _parse_error(path, lineno, f"bad face line {i} (triangles only)") from None
        if faces[i].max() >= nv or faces[i].min() < 0:
            raise _parse_error(path, lineno, f"face index out of range: {faces[i].max()} >= {nv}")
    return SurfaceMesh(vertices, faces)


def _load_ply_ascii(path: str) -> SurfaceMesh:
    with open(path) as fh:
        raw = fh.read().splitlines()
    lineno = 0
    counts = {}
    order = []
    in_header = True
    if not raw or raw[0].strip() != "ply":
        raise _parse_error(path, 1, "missing 'ply' magic")
    for lineno, line in enumerate(raw[1:], start=2):
        toks = line.split()
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "format":
            if toks[1] != "ascii":
                raise _parse_error(path, lineno, "only ASCII PLY is supported")
        elif toks[0] == "element":
            counts[toks[1]] = int(toks[2])
            order.append(toks[1])
        elif toks[0] == "end_header":
            in_header = False
            break
    if in_header:
        raise _parse_error(path, lineno, "unterminated PLY header")
    if order[:2] != ["vertex", "face"]:
        raise _parse_error(path, lineno, "expected vertex then face elements")
    body = raw[lineno:]
    nv, nf = counts["vertex"], counts["face"]
    if len([l for l in body if l.strip()]) < nv + nf:
        raise _parse_error(path, lineno, "truncated PLY body")
    vertices = np.empty((nv, 3))
    faces = np.empty((nf, 3), dtype=np.int64)
    idx = 0
    for i in range(nv):
        while not body[idx].strip():
            idx += 1
        try:
            vertices[i] = [float(t) for t in body[idx].split()[:3]]
        except ValueError:
            raise _parse_error(path, lineno + idx + 1, f"bad vertex line {i}") from None
        idx += 1
    for i in range(nf):
        while not body[idx].strip():
            idx += 1
        toks = [int(t) for t in body[idx].split()]
        if toks[0] != 3 or len(toks) < 4:
            raise _parse_error(path, lineno + idx + 1, "triangles only")
        faces[i] = toks[1:4]
        if faces[i].max() >= nv or faces[i].min() < 0:
            raise _parse_error(path, lineno + idx + 1, "face index out of range")
        idx += 1
    return SurfaceMesh(vertices, faces)


def load_mesh(path: str, format: str | None = None) -> SurfaceMesh:
    """Load an OFF or ASCII-PLY triangle mesh; format inferred from extension."""
    if format is None:
        format = "ply-ascii" if str(path).lower().endswith(".ply") else "off"
    if format == "off":
        return _load_off(path)
    if format == "ply-ascii":
        return _load_ply_ascii(path)
    raise DataError(f"unknown mesh format {format!r}")


def save_mesh(mesh: SurfaceMesh, path: str, format: str | None = None) -> None:
    if format is None:
        format = "ply-ascii" if str(path).lower().endswith(".ply") else "off"
    with open(path, "w") as fh:
        if format == "off":
            fh.write("OFF\n")
            fh.write(f"{mesh.n_vertices} {len(mesh.faces)} 0\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
        elif format == "ply-ascii":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {mesh.n_vertices}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write(f"element face {len(mesh.faces)}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
        else:
            raise DataError(f"unknown mesh format {format!r}")


def load_labels(path: str, n_vertices: int | None = None) -> np.ndarray:
    """Label file: one integer per line, line n = label of vertex n."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise _parse_error(path, lineno, f"bad label {line!r}") from None
    out = np.asarray(labels, dtype=np.int64)
    if n_vertices is not None and len(out) != n_vertices:
        raise DataError(f"{path}: {len(out)} labels for {n_vertices} vertices")
    return out


def save_labels(labels: np.ndarray, path: str) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(labels).ravel():
            fh.write(f"{int(v)}\n")


def load_scalars(path: str, n_vertices: int | None = None) -> np.ndarray:
    """Scalar feature file: one float per line."""
    with open(path) as fh:
        vals = [float(line) for line in fh if line.strip()]
    out = np.asarray(vals, dtype=np.float64)
    if n_vertices is not None and len(out) != n_vertices:
        raise DataError(f"{path}: {len(out)} values for {n_vertices} vertices")
    return out


def save_scalars(values: np.ndarray, path: str) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(values, dtype=np.float64).ravel():
            fh.write(f"{v:.17g}\n")
