"""Patch construction and occupancy voxelization (pipeline stage 1).

A cloud is covered by disjoint patches: each patch is the k-nearest
unassigned neighborhood of a random unassigned seed, restricted to a cube of
side l_b around the seed. Patch centroids are recorded, points are re-centered
on them, and each patch can be voxelized into an M^3 binary occupancy grid or
summarized by a 10-dimensional statistic vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    DegenerateNeighborhood,
    LocalSurface,
    PointCloud,
    fit_local_surface,
)

FEATURE_DIM = 10  # normal (3) + curvature (1) + eigenvalue spectrum (3) + extents (3)


@dataclass
class Patch:
    """A disjoint local group of points, centered on its centroid."""

    point_indices: np.ndarray
    centroid: np.ndarray
    centered: np.ndarray
    gt_label: int | None
    stats: LocalSurface | None
    extent: np.ndarray

    @property
    def degenerate(self) -> bool:
        """True when the patch was too small or flat-degenerate for PCA."""
        return self.stats is None

    def __len__(self) -> int:
        return self.point_indices.shape[0]


@dataclass
class VoxelGrid:
    """Binary occupancy grid of a centered patch: values[a, b, c] over x/y/z."""

    m: int
    values: np.ndarray
    voxel_edge: float


def build_patches(
    cloud: PointCloud, k: int, l_b: float, rng: np.random.Generator
) -> list[Patch]:
    """Partition a normalized cloud into disjoint patches.

    Each iteration picks a uniformly random not-yet-assigned seed, gathers its
    k nearest not-yet-assigned neighbors, and keeps those inside the cube of
    side l_b centered at the seed (the seed always survives). Ground-truth
    patch labels are the majority point label, ties to the lowest face index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < l_b <= 1.0:
        raise ValueError("l_b must lie in (0, 1]")
    pts = cloud.points
    npts = len(cloud)
    half = l_b / 2.0
    unassigned = np.ones(npts, dtype=bool)
    patches: list[Patch] = []
    while unassigned.any():
        avail = np.flatnonzero(unassigned)
        seed = int(avail[rng.integers(avail.size)])
        tree = cKDTree(pts[avail])
        kq = min(k, avail.size)
        _, sub_idx = tree.query(pts[seed], k=kq)
        cand = avail[np.atleast_1d(sub_idx)]
        inside = np.max(np.abs(pts[cand] - pts[seed]), axis=1) <= half
        members = np.sort(cand[inside])
        unassigned[members] = False

        centroid = pts[members].mean(axis=0)
        centered = pts[members] - centroid
        gt_label = None
        if cloud.labels is not None:
            gt_label = int(np.argmax(np.bincount(cloud.labels[members])))
        try:
            stats = fit_local_surface(cloud, members)
        except DegenerateNeighborhood:
            stats = None
        extent = centered.max(axis=0) - centered.min(axis=0) if len(members) else np.zeros(3)
        patches.append(Patch(members, centroid, centered, gt_label, stats, extent))
    return patches


def voxelize(patch: Patch, m: int, l_b: float) -> VoxelGrid:
    """Occupancy grid over [-l_b/2, l_b/2]^3 around the patch centroid.

    Voxels span half-open intervals; coordinates on or beyond the outer
    +boundary clamp into the border voxels, so every point lands in a voxel.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    edge = l_b / m
    coords = np.floor((patch.centered + l_b / 2.0) / edge).astype(np.int64)
    coords = np.clip(coords, 0, m - 1)
    values = np.zeros((m, m, m), dtype=np.uint8)
    values[coords[:, 0], coords[:, 1], coords[:, 2]] = 1
    return VoxelGrid(m=m, values=values, voxel_edge=edge)


def patch_statistics(patch: Patch) -> np.ndarray:
    """Statistic vector of a patch: normal, curvature, eigenvalue spectrum,
    per-axis extents. Degenerate patches map to the all-zero vector."""
    if patch.stats is None:
        return np.zeros(FEATURE_DIM)
    evals = patch.stats.eigenvalues
    total = evals.sum()
    spectrum = evals / total if total > 0 else np.zeros(3)
    return np.concatenate(
        [patch.stats.normal, [patch.stats.curvature], spectrum, patch.extent]
    )


@dataclass
class PatchSet:
    """Patches of one cloud plus precomputed statistics for the predictor."""

    patches: list[Patch]
    features: np.ndarray  # (N, FEATURE_DIM)
    centroids: np.ndarray  # (N, 3)
    gt_labels: np.ndarray | None
    num_points: int
    name: str = ""

    def __len__(self) -> int:
        return len(self.patches)


def build_patch_set(
    cloud: PointCloud, k: int, l_b: float, rng: np.random.Generator
) -> PatchSet:
    """Build patches and bundle their statistic vectors and centroids."""
    patches = build_patches(cloud, k, l_b, rng)
    features = np.stack([patch_statistics(p) for p in patches])
    centroids = np.stack([p.centroid for p in patches])
    gt = None
    if cloud.labels is not None:
        gt = np.array([p.gt_label for p in patches], dtype=np.int64)
    return PatchSet(patches, features, centroids, gt, len(cloud), cloud.name)


def save_patches_json(patch_set: PatchSet, path) -> None:
    """Persist the patch partition (indices, centroids, labels) for debugging
    and for running later pipeline stages from files."""
    payload = {
        "name": patch_set.name,
        "num_points": patch_set.num_points,
        "patches": [
            {
                "point_indices": p.point_indices.tolist(),
                "centroid": p.centroid.tolist(),
                "gt_label": p.gt_label,
            }
            for p in patch_set.patches
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")


def load_patches_json(path) -> dict:
    """Load a patch sidecar; returns the raw payload with numpy index arrays."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    for entry in payload["patches"]:
        entry["point_indices"] = np.asarray(entry["point_indices"], dtype=np.int64)
        entry["centroid"] = np.asarray(entry["centroid"], dtype=np.float64)
    return payload
