import numpy as np
import pytest

from faceseg.geometry import PointCloud


def block_assignment_matrix(num_blocks: int, block_size: int) -> np.ndarray:
    """Ideal consistency matrix Y Y^T for equal-size clusters."""
    n = num_blocks * block_size
    y = np.zeros((n, num_blocks))
    for b in range(num_blocks):
        y[b * block_size : (b + 1) * block_size, b] = 1.0
    return y @ y.T


def corrupt_symmetric(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each off-diagonal entry (mirrored) of a 0/1 matrix with prob `rate`."""
    out = x.copy()
    iu = np.triu_indices(x.shape[0], 1)
    flips = rng.random(iu[0].size) < rate
    rows, cols = iu[0][flips], iu[1][flips]
    out[rows, cols] = 1.0 - out[rows, cols]
    out[cols, rows] = out[rows, cols]
    return out


def plane_cloud(n: int, rng: np.random.Generator, z: float = 0.5, extent: float = 0.4) -> PointCloud:
    """Random points on an axis-aligned square patch of the plane z=const."""
    xy = 0.3 + rng.random((n, 2)) * extent
    pts = np.column_stack([xy, np.full(n, z)])
    return PointCloud(pts, np.zeros(n, dtype=np.int64))


@pytest.fixture(scope="session")
def rng_session():
    return np.random.default_rng(20240817)
