"""Low-frequency spectral embeddings of mesh graphs.

The embedding keeps the k smallest nonzero eigenpairs of the normalized
Laplacian and scales each eigenvector by eigenvalue^(-1/2). The trivial
zero eigenpair is dropped before scaling. Eigenvectors are defined only up
to sign (and mixing under degeneracy); that ambiguity is exactly what the
alignment stages downstream resolve.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, NumericError
from .mesh import SparseSymmetric

CONNECTIVITY_THRESHOLD = 1e-9
DEGENERACY_RELATIVE_GAP = 1e-6

_MAGIC = b"SPEC1"


@dataclass(frozen=True)
class SpectralEmbedding:
    """Normalized spectral coordinates (N x k) with their eigenvalues (ascending)."""

    coords: np.ndarray       # (N, k) float64, column c = eigvec_c / sqrt(eigval_c)
    eigenvalues: np.ndarray  # (k,) positive, ascending

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.coords, dtype=np.float64))
        ev = np.ascontiguousarray(np.asarray(self.eigenvalues, dtype=np.float64))
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "eigenvalues", ev)
        if c.ndim != 2 or ev.ndim != 1 or c.shape[1] != len(ev):
            raise DataError(f"coords {c.shape} inconsistent with eigenvalues {ev.shape}")
        if (ev <= 0).any():
            raise DataError("eigenvalues must be strictly positive")
        if (np.diff(ev) < 0).any():
            raise DataError("eigenvalues must be ascending")
        c.setflags(write=False)
        ev.setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.coords.shape[0]

    @property
    def k(self) -> int:
        return self.coords.shape[1]

    def raw_eigenvectors(self) -> np.ndarray:
        """Undo the eigenvalue^(-1/2) scaling; columns have unit 2-norm."""
        return self.coords * np.sqrt(self.eigenvalues)


def _tie_break_order(eigenvalues: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Stable order: ascending eigenvalue, near-degenerate groups ordered by
    the value of each vector's first significant entry (sign-canonicalized)."""
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    perm = list(order)
    scale = max(abs(eigenvalues[0]), abs(eigenvalues[-1]), 1e-300)
    i = 0
    while i < len(perm):
        j = i + 1
        while j < len(perm) and (eigenvalues[j] - eigenvalues[j - 1]) / scale < DEGENERACY_RELATIVE_GAP:
            j += 1
        if j - i > 1:
            def key(col):
                v = vectors[:, col]
                if v[np.argmax(np.abs(v))] < 0:
                    v = -v
                sig = np.nonzero(np.abs(v) > 1e-8)[0]
                return v[sig[0]] if len(sig) else 0.0
            perm[i:j] = sorted(perm[i:j], key=key)
        i = j
    return np.asarray(perm)


def eigensolve_smallest(lap: SparseSymmetric, k: int = 3, tol: float = 1e-8,
                        seed: int = 0) -> SpectralEmbedding:
    """The k smallest nonzero eigenpairs of a normalized Laplacian.

    Uses Lanczos iteration on the spectrally shifted operator 2I - L (whose
    largest eigenvalues are L's smallest); small problems fall back to a
    dense solve. Deterministic for a fixed seed, single-threaded.
    """
    n = lap.dimension
    if k + 1 > n:
        raise DataError(f"need k+1 <= dimension, got k={k}, n={n}")
    L = lap.to_csr()
    want = k + 1
    if n < 64 or want >= n - 1:
        evals, evecs = np.linalg.eigh(L.toarray())
        evals, evecs = evals[:want], evecs[:, :want]
    else:
        shifted = 2.0 * sp.identity(n, format="csr") - L
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            mu, evecs = spla.eigsh(shifted, k=want, which="LA", v0=v0,
                                   maxiter=50 * want * n, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise NumericError(f"eigensolver did not converge: {exc}") from exc
        evals = 2.0 - mu
    order = _tie_break_order(evals, evecs)
    evals, evecs = evals[order], evecs[:, order]

    resid = np.linalg.norm(L @ evecs - evecs * evals, axis=0)
    check_tol = max(tol, 1e-10 * n)
    if (resid > check_tol).any():
        raise NumericError(f"eigenpair residuals exceed tolerance: {resid}")
    if abs(evals[0]) > CONNECTIVITY_THRESHOLD:
        raise NumericError(f"no zero eigenvalue found (smallest {evals[0]:.3e})")
    if evals[1] < CONNECTIVITY_THRESHOLD:
        raise DataError(
            f"graph is disconnected: eigenvalue multiplicity at zero "
            f"(second eigenvalue {evals[1]:.3e})"
        )
    evals, evecs = evals[1:], evecs[:, 1:]
    # Guard against tiny descent from tie-break reordering within a group.
    sort = np.argsort(evals, kind="stable")
    evals, evecs = evals[sort], evecs[:, sort]
    coords = evecs / np.sqrt(evals)
    return SpectralEmbedding(coords, evals)


def sign_canonicalize(emb: SpectralEmbedding) -> SpectralEmbedding:
    """Flip each column so its largest-magnitude entry is positive. Idempotent."""
    coords = emb.coords.copy()
    for c in range(emb.k):
        col = coords[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, c] = -col
    return SpectralEmbedding(coords, emb.eigenvalues)


def random_sign_flip(emb: SpectralEmbedding, seed: int) -> SpectralEmbedding:
    """Independently negate each column with probability 1/2 (seeded)."""
    flips = np.random.default_rng(seed).integers(0, 2, size=emb.k)
    signs = np.where(flips == 1, -1.0, 1.0)
    return SpectralEmbedding(emb.coords * signs, emb.eigenvalues)


def subsample(emb: SpectralEmbedding, n: int, seed: int) -> np.ndarray:
    """n coordinate rows drawn uniformly without replacement (seeded)."""
    if n > emb.node_count:
        raise DataError(f"cannot subsample {n} rows from {emb.node_count} nodes")
    idx = np.random.default_rng(seed).choice(emb.node_count, size=n, replace=False)
    return emb.coords[idx]


def save_embedding(emb: SpectralEmbedding, path: str) -> None:
    """Versioned little-endian binary: SPEC1, N, k, eigenvalues, row-major coords."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", emb.node_count, emb.k))
        fh.write(emb.eigenvalues.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(emb.coords, dtype="<f8").tobytes())


def load_embedding(path: str) -> SpectralEmbedding:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        n, k = struct.unpack("<QQ", fh.read(16))
        ev = np.frombuffer(fh.read(8 * k), dtype="<f8")
        coords = np.frombuffer(fh.read(8 * n * k), dtype="<f8").reshape(n, k)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes")
    return SpectralEmbedding(coords.copy(), ev.copy())
