"""ASCII PLY reading and writing for labeled point clouds.

Clouds are stored with double-precision x/y/z properties, an optional integer
`face` property for labels, and optional uchar red/green/blue for colored
exports. Coordinates are written with `repr`, so a write/read round trip is
bit-exact and output files are deterministic.
"""
from __future__ import annotations

import numpy as np

from .geometry import PointCloud


class PlyError(ValueError):
    """A file is not a PLY file this package can read."""


def write_ply(cloud: PointCloud, path, colors: np.ndarray | None = None) -> None:
    """Write a cloud as ASCII PLY; labels become an int `face` property.

    Args:
        colors: optional (P, 3) uint8 RGB values, one per point.
    """
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property double {axis}" for axis in "xyz"]
    if cloud.labels is not None:
        header.append("property int face")
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        if colors.shape[0] != len(cloud):
            raise ValueError("colors must have one RGB row per point")
        header += [f"property uchar {channel}" for channel in ("red", "green", "blue")]
    header.append("end_header")

    lines = header
    for i in range(len(cloud)):
        x, y, z = cloud.points[i]
        row = [repr(float(x)), repr(float(y)), repr(float(z))]
        if cloud.labels is not None:
            row.append(str(int(cloud.labels[i])))
        if colors is not None:
            row += [str(int(c)) for c in colors[i]]
        lines.append(" ".join(row))
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY vertex cloud; a `face` property becomes labels.

    Raises:
        PlyError: malformed header, binary format, or missing x/y/z.
    """
    with open(path, "r", encoding="ascii") as handle:
        text = handle.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyError(f"{path}: not a PLY file")

    count = None
    properties: list[str] = []
    body_start = None
    in_vertex = False
    for lineno, raw in enumerate(lines[1:], start=1):
        line = raw.strip()
        if line.startswith("format"):
            if "ascii" not in line:
                raise PlyError(f"{path}: only ASCII PLY is supported")
        elif line.startswith("element"):
            parts = line.split()
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) > 0:
                    raise PlyError(f"{path}: unsupported element '{parts[1]}'")
                in_vertex = False
        elif line.startswith("property") and in_vertex:
            properties.append(line.split()[-1])
        elif line == "end_header":
            body_start = lineno + 1
            break
    if count is None or body_start is None:
        raise PlyError(f"{path}: incomplete PLY header")
    for axis in "xyz":
        if axis not in properties:
            raise PlyError(f"{path}: vertex element lacks property '{axis}'")

    cols = {name: properties.index(name) for name in properties}
    points = np.empty((count, 3), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64) if "face" in cols else None
    for i in range(count):
        fields = lines[body_start + i].split()
        points[i] = (
            float(fields[cols["x"]]),
            float(fields[cols["y"]]),
            float(fields[cols["z"]]),
        )
        if labels is not None:
            labels[i] = int(fields[cols["face"]])
    return PointCloud(points, labels)
