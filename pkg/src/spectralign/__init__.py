"""Spectral embedding, learned spectral alignment, and GCN parcellation.

The package mirrors one pipeline: embed surface meshes into spectral
coordinates, align embeddings across subjects (slow iterative oracle or a
learned transform network), and parcellate the aligned coordinates with a
Gaussian-kernel graph convolution network.
"""

from .align import (AlignmentResult, Transform3, align_iterative,
                    apply_transform, load_transform, nearest_correspondence,
                    procrustes_step, save_transform)
from .errors import DataError, NumericError, SpectralignError
from .estimators import (GcnParcellator, IterativeAligner, SgtAligner,
                         SpectralEmbedder)
from .gcn import (GcnModel, gcn_forward, gconv_layer, gconv_layer_reference,
                  graph_edges, parcellation_loss, predict_labels)
from .mesh import (SparseSymmetric, SurfaceMesh, build_adjacency, load_labels,
                   load_mesh, load_scalars, normalized_laplacian, save_labels,
                   save_mesh, save_scalars)
from .metrics import accuracy, avg_hausdorff, dice_overlap
from .params import (Adam, GradientDescent, ParamStore, load_checkpoint,
                     make_optimizer, save_checkpoint)
from .sgt import SgtModel, sgt_forward, sgt_loss, train_sgt
from .spectral import (SpectralEmbedding, eigensolve_smallest, load_embedding,
                       random_sign_flip, save_embedding, sign_canonicalize,
                       subsample)
from .synthetic import (SubjectRecord, load_manifest, make_dataset,
                        make_deformed_sphere, make_parcels, save_manifest)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "Transform3", "align_iterative", "apply_transform",
    "load_transform", "nearest_correspondence", "procrustes_step",
    "save_transform", "DataError", "NumericError", "SpectralignError",
    "GcnParcellator", "IterativeAligner", "SgtAligner", "SpectralEmbedder",
    "GcnModel", "gcn_forward", "gconv_layer", "gconv_layer_reference",
    "graph_edges", "parcellation_loss", "predict_labels", "SparseSymmetric",
    "SurfaceMesh", "build_adjacency", "load_labels", "load_mesh",
    "load_scalars", "normalized_laplacian", "save_labels", "save_mesh",
    "save_scalars", "accuracy", "avg_hausdorff", "dice_overlap", "Adam",
    "GradientDescent", "ParamStore", "load_checkpoint", "make_optimizer",
    "save_checkpoint", "SgtModel", "sgt_forward", "sgt_loss", "train_sgt",
    "SpectralEmbedding", "eigensolve_smallest", "load_embedding",
    "random_sign_flip", "save_embedding", "sign_canonicalize", "subsample",
    "SubjectRecord", "load_manifest", "make_dataset", "make_deformed_sphere",
    "make_parcels", "save_manifest",
]
