"""Iterative column-correlation rounding of the denoised matrix (stage 4).

Starting from one singleton cluster per patch and A = X, the pair of distinct
columns of A with the largest inner product is merged while that inner product
reaches n/2 (n = N/m); after each merge every column of A is rebuilt as the
average of X's columns over its cluster's members. Merging stops when no inner
product reaches the threshold, leaving unmerged patches as singleton clusters.
"""
from __future__ import annotations

import numpy as np

from .geometry import Clustering


class InvalidInput(ValueError):
    """The matrix to round is not square symmetric."""


class IndexMismatch(ValueError):
    """Patch point indices do not form a partition of the cloud."""


def round_clusters(x: np.ndarray, m: int) -> Clustering:
    """Cluster patches from a consistency matrix with face-count bound m.

    The input is clamped to [0, 1] and its diagonal forced to 1 before
    rounding. Ties for the maximum inner product break lexicographically on
    (i, j) with i < j; the j-th cluster is absorbed into the i-th.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise InvalidInput("matrix must be square")
    if not np.allclose(x, x.T, atol=1e-8):
        raise InvalidInput("matrix must be symmetric")
    if m < 1:
        raise ValueError("m must be >= 1")
    n_patches = x.shape[0]
    x = np.clip(x, 0.0, 1.0)
    np.fill_diagonal(x, 1.0)
    threshold = (n_patches / m) / 2.0

    clusters: list[list[int]] = [[i] for i in range(n_patches)]
    a = x.copy()
    while len(clusters) > 1:
        gram = a.T @ a
        # With X in [0,1], averaged columns stay in [0,1], so inner products
        # cannot exceed the row count.
        assert gram.max() <= n_patches + 1e-9
        np.fill_diagonal(gram, -np.inf)
        flat = int(np.argmax(gram))  # first max in row-major order: smallest (i, j)
        i, j = divmod(flat, gram.shape[0])
        if gram[i, j] < threshold:
            break
        clusters[i].extend(clusters[j])
        del clusters[j]
        a = np.stack([x[:, members].mean(axis=1) for members in clusters], axis=1)

    assignments = np.empty(n_patches, dtype=np.int64)
    for cluster_id, members in enumerate(clusters):
        assignments[members] = cluster_id
    return Clustering(assignments, len(clusters))


def clusters_to_points(patch_clustering: Clustering, patches) -> Clustering:
    """Propagate patch cluster ids to points: each point inherits the id of
    its patch. `patches` may hold Patch objects or raw index arrays."""
    if len(patch_clustering) != len(patches):
        raise IndexMismatch(
            f"{len(patch_clustering)} assignments for {len(patches)} patches"
        )
    index_lists = [np.asarray(getattr(p, "point_indices", p), dtype=np.int64) for p in patches]
    total = sum(idx.shape[0] for idx in index_lists)
    out = np.full(total, -2, dtype=np.int64)
    for patch_id, idx in enumerate(index_lists):
        if idx.size and (idx.min() < 0 or idx.max() >= total):
            raise IndexMismatch("patch point index out of range")
        if (out[idx] != -2).any():
            raise IndexMismatch("patches overlap")
        out[idx] = patch_clustering.assignments[patch_id]
    if (out == -2).any():
        raise IndexMismatch("patches do not cover all points")
    return Clustering(out, patch_clustering.num_clusters)
