"""faceseg: segmentation of approximately flat regions in 3D point clouds.

The pipeline covers a cloud with small disjoint patches, predicts pairwise
same-face probabilities, denoises the evidence matrix with a convex
consistency relaxation, and rounds the result into clusters. A synthetic
polyhedra dataset generator and a region-growing baseline are included.
"""

from .datagen import (
    BUILTIN_SPECS,
    GeneratorConfig,
    PolyhedronSpec,
    add_noise,
    generate_dataset,
    round_edges,
    sample_hull,
    transform,
)
from .evaluation import ExperimentSpec, Variant, pairwise_accuracy, run_experiment
from .geometry import (
    OUTLIER,
    Clustering,
    LocalSurface,
    NeighborIndex,
    PointCloud,
    fit_local_surface,
    normalize,
)
from .matchlift import (
    HARD,
    SOFT,
    PairMatrix,
    SdpSolution,
    SolverParams,
    estimate_m,
    feasibility_report,
    harden,
    solve_matchlift,
)
from .patching import Patch, PatchSet, VoxelGrid, build_patch_set, build_patches, patch_statistics, voxelize
from .pipeline import PipelineConfig, SegmentResult, segment_cloud
from .ply import read_ply, write_ply
from .predictor import (
    MlpModel,
    PairFeatures,
    TrainConfig,
    analytic_matrix,
    analytic_predictor,
    load_model,
    predict_matrix,
    save_model,
    train,
)
from .rgs import RgsParams, rgs_segment
from .rounding import clusters_to_points, round_clusters

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_SPECS",
    "Clustering",
    "ExperimentSpec",
    "GeneratorConfig",
    "HARD",
    "LocalSurface",
    "MlpModel",
    "NeighborIndex",
    "OUTLIER",
    "PairFeatures",
    "PairMatrix",
    "Patch",
    "PatchSet",
    "PipelineConfig",
    "PointCloud",
    "PolyhedronSpec",
    "RgsParams",
    "SOFT",
    "SdpSolution",
    "SegmentResult",
    "SolverParams",
    "TrainConfig",
    "Variant",
    "VoxelGrid",
    "add_noise",
    "analytic_matrix",
    "analytic_predictor",
    "build_patch_set",
    "build_patches",
    "clusters_to_points",
    "estimate_m",
    "feasibility_report",
    "fit_local_surface",
    "generate_dataset",
    "harden",
    "load_model",
    "normalize",
    "pairwise_accuracy",
    "patch_statistics",
    "predict_matrix",
    "read_ply",
    "rgs_segment",
    "round_clusters",
    "round_edges",
    "run_experiment",
    "sample_hull",
    "save_model",
    "segment_cloud",
    "solve_matchlift",
    "train",
    "transform",
    "voxelize",
    "write_ply",
]
