"""Greedy region-growing segmentation over point normals and curvature.

Regions grow from the unassigned point of minimum curvature. A neighbor j of
the current seed i joins the region when the angle between their estimated
normals is within alpha_th; it becomes a new seed when its curvature is below
gamma_th. Regions smaller than min_cluster_size are declared outliers.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import (
    OUTLIER,
    Clustering,
    NeighborIndex,
    PointCloud,
    canonicalize_normals,
)

_UNASSIGNED = -2


@dataclass
class RgsParams:
    k: int = 20
    alpha_th: float = math.radians(3.0)
    gamma_th: float = 1.0
    min_cluster_size: int | None = None  # None: max(10, P // 1000)

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if not 0.0 < self.alpha_th <= math.pi:
            raise ValueError("alpha_th must lie in (0, pi]")
        if self.gamma_th < 0:
            raise ValueError("gamma_th must be >= 0")
        if self.min_cluster_size is not None and self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


def normals_within(n_i: np.ndarray, n_j: np.ndarray, alpha_th: float) -> bool:
    """Angle test between normals; the sign-insensitive |dot| treats antipodal
    normals as parallel, and clamping avoids NaN from rounding."""
    dot = min(abs(float(n_i @ n_j)), 1.0)
    return math.acos(dot) <= alpha_th


def estimate_point_features(
    cloud: PointCloud, k: int, index: NeighborIndex | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-point normals and curvature from PCA over k-NN neighborhoods.

    Returns (neighborhoods, normals, curvatures, valid); `valid` is False for
    points whose neighborhood covariance has rank < 2.
    """
    index = index if index is not None else NeighborIndex(cloud)
    neigh = index.knn_array(k)
    pts = cloud.points[neigh]
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("pki,pkj->pij", centered, centered) / neigh.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    valid = (evals[:, 2] > 0.0) & (evals[:, 1] > evals[:, 2] * 1e-12)
    normals = canonicalize_normals(evecs[:, :, 0])
    total = evals.sum(axis=1)
    curvature = np.divide(evals[:, 0], total, out=np.zeros_like(total), where=total > 0)
    return neigh, normals, curvature, valid


def rgs_segment(cloud: PointCloud, params: RgsParams) -> Clustering:
    """Segment a cloud into approximately flat regions; see module docstring."""
    npts = len(cloud)
    neigh, normals, curvature, valid = estimate_point_features(cloud, params.k)

    assign = np.full(npts, _UNASSIGNED, dtype=np.int64)
    assign[~valid] = OUTLIER  # degenerate feature estimate: treat as outlier
    available = valid.copy()
    min_size = params.min_cluster_size
    if min_size is None:
        min_size = max(10, npts // 1000)

    next_id = 0
    while available.any():
        cand = np.flatnonzero(available)
        seed = int(cand[np.argmin(curvature[cand])])  # curvature ties: lowest index
        region = [seed]
        available[seed] = False
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            nbrs = neigh[i]
            nbrs = nbrs[available[nbrs]]
            if nbrs.size == 0:
                continue
            dots = np.clip(np.abs(normals[nbrs] @ normals[i]), 0.0, 1.0)
            accepted = nbrs[np.arccos(dots) <= params.alpha_th]
            if accepted.size == 0:
                continue
            available[accepted] = False
            region.extend(int(j) for j in accepted)
            for j in accepted[curvature[accepted] <= params.gamma_th]:
                queue.append(int(j))
        if len(region) >= min_size:
            assign[region] = next_id
            next_id += 1
        else:
            assign[region] = OUTLIER
    return Clustering(assign, next_id)
