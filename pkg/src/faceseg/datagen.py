"""Labeled polyhedra dataset generation.

Point clouds are sampled uniformly from the surface of convex polyhedra and
then randomized: rotated, stretched along x/y, optionally edge-rounded by
local averaging, normalized into the unit box, and perturbed with Gaussian
noise. Each point carries the index of the hull face it was sampled on.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import NeighborIndex, PointCloud, normalize
from .ply import write_ply

COPLANAR_ANGLE = 1e-6  # radians; triangles merged into one face below this


class DegenerateSpec(ValueError):
    """Polyhedron vertices are coplanar; no 3D hull exists."""


class NegativeSigma(ValueError):
    """Noise standard deviation must be nonnegative."""


@dataclass
class PolyhedronSpec:
    """A convex polyhedron given by its vertices (>= 4, not all coplanar)."""

    name: str
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if self.vertices.shape[0] < 4:
            raise DegenerateSpec(f"{self.name}: need >= 4 vertices")
        centered = self.vertices - self.vertices.mean(axis=0)
        if np.linalg.matrix_rank(centered) < 3:
            raise DegenerateSpec(f"{self.name}: vertices are coplanar")


@dataclass
class GeneratorConfig:
    """Randomization ranges for the generator; defaults match the standard setup."""

    num_points_range: tuple[int, int] = (5000, 50000)
    rounding_apply_prob: float = 0.5
    rounding_alpha_range: tuple[float, float] = (100.0, 10000.0)
    rotation_range_deg: tuple[float, float] = (0.0, 360.0)
    stretch_range: tuple[float, float] = (0.5, 1.0)
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("num_points_range", "rounding_alpha_range", "rotation_range_deg", "stretch_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if not 0.0 <= self.rounding_apply_prob <= 1.0:
            raise ValueError("rounding_apply_prob must be a probability")
        if self.noise_sigma < 0:
            raise NegativeSigma(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _regular_polygon(sides: int, z: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(sides) / sides
    return np.column_stack([np.cos(angles), np.sin(angles), np.full(sides, z)])


def _prism(sides: int) -> np.ndarray:
    return np.vstack([_regular_polygon(sides, 0.0), _regular_polygon(sides, 1.0)])


BUILTIN_SPECS: dict[str, PolyhedronSpec] = {
    "cube": PolyhedronSpec(
        "cube",
        [(x, y, z) for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)],
    ),
    "tetrahedron": PolyhedronSpec(
        "tetrahedron", [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    ),
    "octahedron": PolyhedronSpec(
        "octahedron",
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)],
    ),
    "pentagonal_pyramid": PolyhedronSpec(
        "pentagonal_pyramid", np.vstack([_regular_polygon(5, 0.0), [(0.0, 0.0, 1.0)]])
    ),
    "octagonal_prism": PolyhedronSpec("octagonal_prism", _prism(8)),
    "pentagonal_prism": PolyhedronSpec("pentagonal_prism", _prism(5)),
}

# Test-set shapes mirror the evaluation split; the remaining built-ins stand
# in for the training pool.
TRAINVAL_SPEC_NAMES = ("tetrahedron", "octahedron", "pentagonal_prism")
TEST_SPEC_NAMES = ("cube", "octagonal_prism", "pentagonal_pyramid")


@dataclass
class HullFaces:
    """Triangulated convex hull with coplanar triangles merged into faces."""

    triangles: np.ndarray  # (T, 3, 3) vertex coordinates
    areas: np.ndarray  # (T,)
    face_of_triangle: np.ndarray  # (T,) face label per triangle
    normals: np.ndarray  # (T, 3) outward unit normals
    offsets: np.ndarray  # (T,) plane offsets: n . p + d = 0 on the plane
    num_faces: int


def hull_faces(spec: PolyhedronSpec) -> HullFaces:
    """Compute hull triangles and group coplanar adjacent ones into faces."""
    try:
        hull = ConvexHull(spec.vertices)
    except QhullError as exc:
        raise DegenerateSpec(f"{spec.name}: {exc}") from exc
    normals = hull.equations[:, :3]
    offsets = hull.equations[:, 3]
    ntri = hull.simplices.shape[0]

    face_of = np.full(ntri, -1, dtype=np.int64)
    next_face = 0
    for start in range(ntri):
        if face_of[start] >= 0:
            continue
        face_of[start] = next_face
        stack = [start]
        while stack:
            cur = stack.pop()
            for nb in hull.neighbors[cur]:
                if face_of[nb] >= 0:
                    continue
                cosang = float(np.clip(normals[cur] @ normals[nb], -1.0, 1.0))
                if math.acos(cosang) < COPLANAR_ANGLE:
                    face_of[nb] = next_face
                    stack.append(nb)
        next_face += 1

    tri = spec.vertices[hull.simplices]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    return HullFaces(tri, areas, face_of, normals, offsets, next_face)


def sample_hull(spec: PolyhedronSpec, n: int, rng: np.random.Generator) -> PointCloud:
    """Draw n labeled points uniformly from the surface of the hull.

    Triangles are chosen with probability proportional to area and points are
    placed uniformly inside via barycentric coordinates; each point's label is
    the (merged) face its triangle belongs to.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    faces = hull_faces(spec)
    probs = faces.areas / faces.areas.sum()
    choice = rng.choice(faces.areas.shape[0], size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    outside = u + v > 1.0
    u[outside] = 1.0 - u[outside]
    v[outside] = 1.0 - v[outside]
    tri = faces.triangles[choice]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts, faces.face_of_triangle[choice], spec.name)


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Roll-pitch-yaw rotation (about x, then y, then z), angles in radians."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def apply_transform(cloud: PointCloud, angles_rad, mu: float, nu: float) -> PointCloud:
    """Rotate by roll/pitch/yaw, then stretch x by mu and y by nu."""
    rot = rotation_matrix(*angles_rad)
    pts = cloud.points @ rot.T
    pts = pts * np.array([mu, nu, 1.0])
    return cloud.with_points(pts)


def transform(cloud: PointCloud, rng: np.random.Generator, config: GeneratorConfig) -> PointCloud:
    """Apply a randomly sampled rotation and x/y stretch; labels unchanged."""
    lo, hi = config.rotation_range_deg
    angles = np.radians(rng.uniform(lo, hi, size=3))
    mu, nu = rng.uniform(*config.stretch_range, size=2)
    return apply_transform(cloud, angles, float(mu), float(nu))


def round_edges(cloud: PointCloud, k: int, index: NeighborIndex | None = None) -> PointCloud:
    """Smooth the cloud by moving every point to the mean of its k nearest
    neighbors' original positions (all points updated simultaneously)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    index = index if index is not None else NeighborIndex(cloud)
    neigh = index.knn_array(k)
    return cloud.with_points(cloud.points[neigh].mean(axis=1))


def add_noise(cloud: PointCloud, sigma: float, rng: np.random.Generator) -> PointCloud:
    """Add i.i.d. zero-mean Gaussian noise per coordinate; no re-normalization."""
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    noise = rng.normal(0.0, sigma, size=cloud.points.shape) if sigma > 0 else 0.0
    return cloud.with_points(cloud.points + noise)


@dataclass
class DatasetBundle:
    """Generated splits plus the per-cloud parameter manifest."""

    train: list[PointCloud]
    val: list[PointCloud]
    test: list[PointCloud]
    manifest: list[dict] = field(default_factory=list)


def _cloud_rng(rng_seed: int, index: int) -> np.random.Generator:
    # Per-cloud derived seed; clouds are independent and may be generated in parallel.
    return np.random.default_rng(np.random.SeedSequence([rng_seed, index]))


def _generate_one(specs: list[PolyhedronSpec], config: GeneratorConfig, index: int, split: str) -> tuple[PointCloud, dict]:
    rng = _cloud_rng(config.rng_seed, index)
    spec = specs[int(rng.integers(len(specs)))]
    lo, hi = config.num_points_range
    n = int(rng.integers(lo, hi + 1))
    cloud = sample_hull(spec, n, rng)
    angles_deg = rng.uniform(*config.rotation_range_deg, size=3)
    mu, nu = (float(x) for x in rng.uniform(*config.stretch_range, size=2))
    cloud = apply_transform(cloud, np.radians(angles_deg), mu, nu)
    apply_rounding = bool(rng.random() < config.rounding_apply_prob)
    alpha = float(rng.uniform(*config.rounding_alpha_range))
    k_round = max(1, int(round(n / alpha)))
    if apply_rounding:
        cloud = round_edges(cloud, k_round)
    cloud = normalize(cloud)
    cloud = add_noise(cloud, config.noise_sigma, rng)
    name = f"{spec.name}_{index:04d}"
    cloud = PointCloud(cloud.points, cloud.labels, name)
    record = {
        "index": index,
        "split": split,
        "name": name,
        "spec": spec.name,
        "seed": [config.rng_seed, index],
        "num_points": n,
        "roll_deg": float(angles_deg[0]),
        "pitch_deg": float(angles_deg[1]),
        "yaw_deg": float(angles_deg[2]),
        "mu": mu,
        "nu": nu,
        "rounded": apply_rounding,
        "alpha": alpha,
        "rounding_k": k_round,
        "sigma": config.noise_sigma,
    }
    return cloud, record


def generate_dataset(
    trainval_specs: list[PolyhedronSpec],
    test_specs: list[PolyhedronSpec],
    config: GeneratorConfig,
    counts: tuple[int, int, int],
) -> DatasetBundle:
    """Generate train/val/test splits of labeled clouds.

    Train and validation clouds draw from `trainval_specs`, test clouds from
    `test_specs`; callers evaluating generalization should keep the two lists
    disjoint. Fully deterministic under `config.rng_seed`.
    """
    n_train, n_val, n_test = counts
    bundle = DatasetBundle([], [], [])
    index = 0
    for split, total, specs, out in (
        ("train", n_train, trainval_specs, bundle.train),
        ("val", n_val, trainval_specs, bundle.val),
        ("test", n_test, test_specs, bundle.test),
    ):
        for _ in range(total):
            cloud, record = _generate_one(specs, config, index, split)
            out.append(cloud)
            bundle.manifest.append(record)
            index += 1
    return bundle


def write_dataset(bundle: DatasetBundle, out_dir, config: GeneratorConfig | None = None) -> None:
    """Write bundle splits as PLY files plus manifest.json under out_dir."""
    for split, clouds in (("train", bundle.train), ("val", bundle.val), ("test", bundle.test)):
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        for cloud in clouds:
            write_ply(cloud, os.path.join(split_dir, f"{cloud.name}.ply"))
    manifest = {"clouds": bundle.manifest}
    if config is not None:
        manifest["config"] = {
            "num_points_range": list(config.num_points_range),
            "rounding_apply_prob": config.rounding_apply_prob,
            "rounding_alpha_range": list(config.rounding_alpha_range),
            "rotation_range_deg": list(config.rotation_range_deg),
            "stretch_range": list(config.stretch_range),
            "noise_sigma": config.noise_sigma,
            "rng_seed": config.rng_seed,
        }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
