"""Core point-cloud containers, normalization, KNN search, and PCA plane fitting.

Everything downstream (dataset generation, region growing, patching) is built
on the types in this module. All containers are treated as immutable after
construction, so they can be shared freely between workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

OUTLIER = -1


class EmptyCloud(ValueError):
    """An operation required a nonempty point cloud."""


class DegenerateCloud(ValueError):
    """All points of a cloud coincide, so no scale can be defined."""


class InvalidIndex(IndexError):
    """A point index is out of range for the indexed cloud."""


class DegenerateNeighborhood(ValueError):
    """A neighborhood is too small or too flat (rank < 2) for plane fitting."""


@dataclass
class PointCloud:
    """An ordered set of 3D points with optional per-point face labels.

    Args:
        points: (P, 3) float coordinates. Must be finite.
        labels: optional (P,) integer face indices. Ground-truth labels are
            non-negative; cluster outputs may carry OUTLIER (-1).
        name: free-form identifier carried through the pipeline.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError(
                    f"labels length {self.labels.shape[0]} != point count {self.points.shape[0]}"
                )

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """New cloud with replaced coordinates and the same labels/name."""
        return PointCloud(points, self.labels, self.name)


@dataclass
class Clustering:
    """Assignment of elements (points or patches) to clusters.

    Cluster ids are contiguous 0..num_clusters-1; OUTLIER (-1) marks elements
    that belong to no cluster.
    """

    assignments: np.ndarray
    num_clusters: int

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64).reshape(-1)
        ids = np.unique(self.assignments[self.assignments != OUTLIER])
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_clusters):
            raise ValueError("cluster ids must lie in 0..num_clusters-1 or be OUTLIER")
        if ids.size != self.num_clusters:
            raise ValueError("cluster ids must be contiguous (every id occupied)")

    def __len__(self) -> int:
        return self.assignments.shape[0]

    def sizes(self) -> np.ndarray:
        """Per-cluster element counts (outliers excluded)."""
        kept = self.assignments[self.assignments != OUTLIER]
        return np.bincount(kept, minlength=self.num_clusters)

    def num_outliers(self) -> int:
        return int(np.sum(self.assignments == OUTLIER))


@dataclass
class LocalSurface:
    """PCA plane fit of a neighborhood: unit normal, curvature, eigenvalues.

    The normal is the eigenvector of the smallest covariance eigenvalue,
    sign-canonicalized; curvature is the smallest eigenvalue's share of the
    eigenvalue sum (0 on a perfect plane, at most 1/3).
    """

    normal: np.ndarray
    curvature: float
    eigenvalues: np.ndarray = field(repr=False)


def normalize(cloud: PointCloud) -> PointCloud:
    """Fit a cloud tightly into the unit box [0,1]^3.

    Translates the per-axis minima to zero, then divides every coordinate by
    the single global maximum over all axes, so proportions are preserved.

    Raises:
        EmptyCloud: the cloud has no points.
        DegenerateCloud: all points coincide.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    shifted = cloud.points - cloud.points.min(axis=0)
    scale = shifted.max()
    if scale <= 0.0:
        raise DegenerateCloud("all points coincide; cloud has no extent")
    return cloud.with_points(shifted / scale)


class NeighborIndex:
    """K-nearest-neighbor search over a point cloud, backed by a k-d tree.

    Queries are deterministic: neighbors are ordered by nondecreasing
    Euclidean distance, exact distance ties are broken by lower point index,
    and the query point itself always comes first (it is its own nearest
    neighbor at distance zero, ahead of coincident duplicates).
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.points = cloud.points
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def knn(self, seed: int, k: int) -> np.ndarray:
        """Indices of the min(k, P) nearest points to point `seed`.

        Raises:
            InvalidIndex: seed is out of range.
        """
        npts = len(self)
        if not 0 <= seed < npts:
            raise InvalidIndex(f"seed {seed} out of range for {npts} points")
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, npts)
        query = self.points[seed]
        dists, _ = self._tree.query(query, k=k)
        dmax = float(np.max(np.atleast_1d(dists)))
        # Pull in every candidate tied at the k-th distance before cutting,
        # so the index tie-break sees the full tie group.
        radius = dmax * (1.0 + 1e-12) + 1e-300
        cand = np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64)
        diff = self.points[cand] - query
        d2 = np.einsum("ij,ij->i", diff, diff)
        tie_key = np.where(cand == seed, -1, cand)
        order = np.lexsort((tie_key, d2))
        return cand[order][:k]

    def knn_array(self, k: int) -> np.ndarray:
        """(P, min(k, P)) neighbor indices for every point at once.

        Each row is ordered like `knn` (distance, then index, query first).
        Unlike `knn`, an exact distance tie straddling the k-th-neighbor
        boundary is resolved by tree traversal order; such ties do not occur
        for clouds with generic coordinates.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        npts = len(self)
        k = min(k, npts)
        dists, idx = self._tree.query(self.points, k=k, workers=-1)
        dists = dists.reshape(npts, k)
        idx = idx.reshape(npts, k).astype(np.int64)
        rows = np.arange(npts)[:, None]
        tie_key = np.where(idx == rows, -1, idx)
        order = np.lexsort((tie_key, dists), axis=1)
        return np.take_along_axis(idx, order, axis=1)


def canonical_normal_sign(normal: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Flip a vector so its first component with magnitude > eps is positive."""
    for component in normal:
        if abs(component) > eps:
            return normal if component > 0 else -normal
    return normal


def canonicalize_normals(normals: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Vectorized `canonical_normal_sign` over rows of an (N, 3) array."""
    big = np.abs(normals) > eps
    first = np.argmax(big, axis=1)
    lead = normals[np.arange(normals.shape[0]), first]
    flip = big.any(axis=1) & (lead < 0)
    out = normals.copy()
    out[flip] *= -1.0
    return out


def fit_local_surface(cloud: PointCloud, neighborhood) -> LocalSurface:
    """PCA plane fit over the given point indices of a cloud.

    Raises:
        DegenerateNeighborhood: fewer than 3 points, or covariance rank < 2
            (collinear or coincident points). Callers treat such points as
            outliers.
    """
    idx = np.asarray(neighborhood, dtype=np.int64)
    pts = cloud.points[idx]
    if pts.shape[0] < 3:
        raise DegenerateNeighborhood(f"need >= 3 points, got {pts.shape[0]}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    if evals[2] <= 0.0 or evals[1] <= evals[2] * 1e-12:
        raise DegenerateNeighborhood("neighborhood covariance has rank < 2")
    normal = canonical_normal_sign(evecs[:, 0])
    total = float(evals.sum())
    curvature = float(evals[0] / total) if total > 0 else 0.0
    return LocalSurface(normal=normal, curvature=curvature, eigenvalues=evals)
