"""Parcellation evaluation: Dice overlap, accuracy, average boundary Hausdorff.

"Average Hausdorff" here is the symmetric average surface distance between
parcel boundaries: for each class, the mean nearest-neighbor Euclidean
distance from predicted boundary vertices to true ones and back, averaged.
A class whose boundary is empty in exactly one labeling scores the mesh
diameter.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .mesh import SurfaceMesh


def _check_pair(pred, truth, classes=None):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if len(pred) != len(truth):
        raise DataError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if classes is not None:
        for name, arr in (("pred", pred), ("truth", truth)):
            if len(arr) and (arr.min() < 0 or arr.max() >= classes):
                raise DataError(f"{name} labels out of range [0, {classes})")
    return pred, truth


def dice_overlap(pred, truth, classes: int = 32) -> tuple[np.ndarray, float]:
    """Per-class Dice 2|P∩T|/(|P|+|T|) and the mean over classes present
    in either labeling (classes absent from both are excluded)."""
    pred, truth = _check_pair(pred, truth, classes)
    per_class = np.full(classes, np.nan)
    for c in range(classes):
        p = pred == c
        t = truth == c
        denom = p.sum() + t.sum()
        if denom == 0:
            continue
        per_class[c] = 2.0 * (p & t).sum() / denom
    mean = float(np.nanmean(per_class))
    return per_class, mean


def accuracy(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return float((pred == truth).mean())


def _boundary_vertices(labels: np.ndarray, cls: int, edges: np.ndarray) -> np.ndarray:
    """Vertices of class cls that have a differently-labeled neighbor."""
    in_cls = labels == cls
    diff = labels[edges[:, 0]] != labels[edges[:, 1]]
    boundary = np.zeros(len(labels), dtype=bool)
    boundary[edges[diff, 0]] = True
    boundary[edges[diff, 1]] = True
    return np.nonzero(boundary & in_cls)[0]


def avg_hausdorff(pred, truth, mesh: SurfaceMesh, classes: int = 32) -> float:
    """Symmetric average boundary distance, mean over classes present in both."""
    pred, truth = _check_pair(pred, truth, classes)
    if len(pred) != mesh.n_vertices:
        raise DataError("labels do not match mesh vertex count")
    edges = mesh.edges()
    v = mesh.vertices
    diameter = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    scores = []
    for c in range(classes):
        if not ((pred == c).any() and (truth == c).any()):
            continue
        bp = _boundary_vertices(pred, c, edges)
        bt = _boundary_vertices(truth, c, edges)
        if len(bp) == 0 and len(bt) == 0:
            scores.append(0.0)
            continue
        if len(bp) == 0 or len(bt) == 0:
            scores.append(diameter)
            continue
        d = np.linalg.norm(v[bp][:, None, :] - v[bt][None, :, :], axis=2)
        scores.append(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))
    if not scores:
        raise DataError("no class present in both labelings")
    return float(np.mean(scores))
