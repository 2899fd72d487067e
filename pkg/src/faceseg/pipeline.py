"""End-to-end segmentation pipeline and its default configuration.

Defaults follow the standard setup: patch neighborhoods of P/50 points inside
a 0.2 cube, 21 voxels per dimension, hardening threshold 0.5, and a fixed
face-count overestimate m = 14.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Clustering, PointCloud, normalize
from .matchlift import PairMatrix, SdpSolution, SolverParams, estimate_m, harden, solve_matchlift
from .patching import PatchSet, build_patch_set
from .predictor import MlpModel, analytic_matrix, predict_matrix
from .rounding import clusters_to_points, round_clusters


@dataclass
class PipelineConfig:
    """All pipeline parameters, with file-based overrides via `from_file`."""

    knn_divisor: float = 50.0  # patch k = num_points / knn_divisor
    patch_cube: float = 0.2  # l_b
    voxel_box: float = 0.2
    voxels_per_dim: int = 21
    harden_threshold: float = 0.5
    m: int = 14
    use_hard: bool = False
    skip_lift: bool = False
    estimate_m: bool = False
    solver_tol: float = 1e-6
    solver_max_iter: int = 5000
    solver_rho: float = 1.0
    lr: float = 1e-4
    epochs: int = 13
    class_weight_ratio: float = 8.0
    rounds: int = 50
    hidden: int = 30
    blocks: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.knn_divisor <= 0 or not 0 < self.patch_cube <= 1:
            raise ValueError("knn_divisor must be positive and patch_cube in (0, 1]")
        if self.voxels_per_dim < 1 or self.m < 1:
            raise ValueError("voxels_per_dim and m must be >= 1")
        if not 0 <= self.harden_threshold <= 1:
            raise ValueError("harden_threshold must be a probability")
        if min(self.solver_tol, self.solver_max_iter, self.lr, self.epochs, self.rounds) <= 0:
            raise ValueError("solver and training parameters must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        """Load a JSON config; keyword overrides win over file values."""
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def replace(self, **overrides) -> "PipelineConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig(**data)

    def solver_params(self) -> SolverParams:
        return SolverParams(rho=self.solver_rho, tol=self.solver_tol, max_iter=self.solver_max_iter)


@dataclass
class SegmentResult:
    """Artifacts of one pipeline run over a single cloud."""

    point_clustering: Clustering
    patch_clustering: Clustering
    patch_set: PatchSet
    soft: PairMatrix
    matrix_in: PairMatrix
    solution: SdpSolution | None
    m_used: int
    timings: dict[str, float] = field(default_factory=dict)

    def report(self, config: PipelineConfig) -> dict:
        """JSON-serializable run summary including the effective config."""
        return {
            "num_points": self.patch_set.num_points,
            "num_patches": len(self.patch_set),
            "m_used": self.m_used,
            "num_clusters": self.patch_clustering.num_clusters,
            "solver_iterations": None if self.solution is None else self.solution.iterations,
            "solver_converged": None if self.solution is None else self.solution.converged,
            "timings": self.timings,
            "config": asdict(config),
        }


def segment_cloud(
    cloud: PointCloud,
    config: PipelineConfig,
    model: MlpModel | None = None,
    rng: np.random.Generator | None = None,
) -> SegmentResult:
    """Run stages 1-4 on one cloud: normalize, patch, predict the pairwise
    matrix (trained model, or the analytic predictor when model is None),
    optionally harden, optionally solve the consistency relaxation, round."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    timings: dict[str, float] = {}

    start = time.perf_counter()
    cloud = normalize(cloud)
    k = max(1, int(round(len(cloud) / config.knn_divisor)))
    patch_set = build_patch_set(cloud, k, config.patch_cube, rng)
    timings["patching"] = time.perf_counter() - start

    start = time.perf_counter()
    soft = analytic_matrix(patch_set) if model is None else predict_matrix(model, patch_set)
    timings["predict"] = time.perf_counter() - start

    matrix_in = harden(soft, config.harden_threshold) if config.use_hard else soft

    solution = None
    m_used = config.m
    start = time.perf_counter()
    if not config.skip_lift:
        if config.estimate_m:
            m_used = estimate_m(matrix_in)
        solution = solve_matchlift(matrix_in, m_used, config.solver_params())
        x = np.clip(solution.x, 0.0, 1.0)
    else:
        x = matrix_in.values
    timings["lift"] = time.perf_counter() - start

    start = time.perf_counter()
    patch_clustering = round_clusters(x, m_used)
    point_clustering = clusters_to_points(patch_clustering, patch_set.patches)
    timings["round"] = time.perf_counter() - start

    return SegmentResult(
        point_clustering=point_clustering,
        patch_clustering=patch_clustering,
        patch_set=patch_set,
        soft=soft,
        matrix_in=matrix_in,
        solution=solution,
        m_used=m_used,
        timings=timings,
    )
