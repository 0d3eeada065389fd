"""splatforest: hierarchical hybrid Gaussian-splat scene representation.

A 3-layer forest stores per-Gaussian explicit attributes on leaves and
shared latent features on internal/root nodes; two small networks
decode covariance and view-dependent color. Everything trains end to
end through a differentiable rasterizer with hand-written adjoints,
grows and prunes adaptively, and serializes to a compact half-float
model format.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bootstrap import PointCloud, build_initial_forest, kmeans, synth_points
from .camera import Camera, look_at
from .decoder import (DecodedGaussian, Decoders, build_covariance, decode_all,
                      decode_cov, decode_rgb)
from .errors import FormatError, StructureError, TrainAbort
from .forest import (Forest, ForestStats, IndexRemap, Layer, LeafNode, NodeId,
                     ValidationReport, clone_leaf, clone_leaf_and_internal,
                     clone_path, empty_forest, gather_features, path_of,
                     remove_leaves_and_compact, stats, validate)
from .metrics import metrics, psnr
from .mlp import Mlp
from .modelfile import SizeReport, load_model, save_model, size_report
from .ply import load_ply, write_ply
from .renderer import (RenderOutput, Splat, project, rasterize,
                       rasterize_backward, render, render_backward,
                       render_forward)
from .scene import SceneDataset, gen_synthetic_scene, load_scene, save_scene
from .ssim import ssim
from .trainer import (CgAccumulator, GrowthCase, GrowthReport, OptState,
                      PruneReport, TrainConfig, TrainLog, classify_growth,
                      grow, loss, prune, train)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "PointCloud", "build_initial_forest", "kmeans",
    "synth_points", "Camera", "look_at", "DecodedGaussian", "Decoders",
    "build_covariance", "decode_all", "decode_cov", "decode_rgb",
    "FormatError", "StructureError", "TrainAbort", "Forest", "ForestStats",
    "IndexRemap", "Layer", "LeafNode", "NodeId", "ValidationReport",
    "clone_leaf", "clone_leaf_and_internal", "clone_path", "empty_forest",
    "gather_features", "path_of", "remove_leaves_and_compact", "stats",
    "validate", "metrics", "psnr", "Mlp", "SizeReport", "load_model",
    "save_model", "size_report", "load_ply", "write_ply", "RenderOutput",
    "Splat", "project", "rasterize", "rasterize_backward", "render",
    "render_backward", "render_forward", "SceneDataset",
    "gen_synthetic_scene", "load_scene", "save_scene", "ssim",
    "CgAccumulator", "GrowthCase", "GrowthReport", "OptState", "PruneReport",
    "TrainConfig", "TrainLog", "classify_growth", "grow", "loss", "prune",
    "train",
]
