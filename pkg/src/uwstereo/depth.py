"""Disparity to metric depth, depth filtering, and textured surface meshes."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import Delaunay, QhullError

from .imgcore import RasterImage, save_image, write_pfm


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class CameraRig:
    focal_length: float  # pixels
    baseline: float  # metres

    def __post_init__(self):
        if not self.focal_length > 0 or not self.baseline > 0:
            raise ValueError("focal length and baseline must be positive")


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) metres, meaningful where valid
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape:
            raise ValueError("depth and validity mask differ in shape")
        bad = self.valid & ~(np.isfinite(self.depth) & (self.depth > 0))
        if bad.any():
            raise ValueError("valid pixels must carry finite positive depth")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def triangulate_depth(disp, rig: CameraRig, valid=None, disparity_offset: float = 0.0) -> DepthMap:
    """z = f * B / d; non-positive disparities are marked invalid.

    ``disp`` is a DisparityMap or a plain array (with an optional mask).
    ``disparity_offset`` is subtracted first; rectification that shifts the two
    principal points apart horizontally adds exactly that offset to every disparity.
    """
    if hasattr(disp, "labels"):
        d = np.asarray(disp.labels, dtype=np.float64)
        mask = np.asarray(disp.valid, dtype=bool)
    else:
        d = np.asarray(disp, dtype=np.float64)
        mask = np.ones(d.shape, bool) if valid is None else np.asarray(valid, dtype=bool)
    d = d - disparity_offset
    mask = mask & np.isfinite(d) & (d > 0)
    z = np.zeros_like(d)
    z[mask] = (rig.focal_length * rig.baseline) / d[mask]
    return DepthMap(z, mask)


def disparity_of(dm: DepthMap, rig: CameraRig) -> np.ndarray:
    """Inverse of triangulate_depth on valid pixels (0 elsewhere)."""
    d = np.zeros_like(dm.depth)
    d[dm.valid] = (rig.focal_length * rig.baseline) / dm.depth[dm.valid]
    return d


def smooth_depth(dm: DepthMap, window: int = 5) -> DepthMap:
    """Median of the valid depths in each ``window`` x ``window`` neighbourhood.

    Pixels whose neighbourhood holds no valid depth stay invalid; invalid
    pixels with valid neighbours are filled.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 1")
    if window == 1:
        return DepthMap(dm.depth.copy(), dm.valid.copy())
    r = window // 2
    vals = np.where(dm.valid, dm.depth, np.nan)
    padded = np.pad(vals, r, mode="constant", constant_values=np.nan)
    win = sliding_window_view(padded, (window, window))
    any_valid = np.pad(dm.valid, r, mode="constant")
    any_valid = sliding_window_view(any_valid, (window, window)).any(axis=(2, 3))
    out = np.zeros_like(dm.depth)
    if any_valid.any():
        out[any_valid] = np.nanmedian(win[any_valid], axis=(1, 2))
    return DepthMap(out, any_valid)


def backproject(dm: DepthMap, rig: CameraRig, pixels=None) -> np.ndarray:
    """3-D points (N, 3) for valid pixels, principal point at the image centre.

    ``pixels`` optionally restricts to (N, 2) integer (x, y) positions.
    """
    cx, cy = dm.width / 2.0, dm.height / 2.0
    if pixels is None:
        ys, xs = np.nonzero(dm.valid)
    else:
        px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        xs, ys = px[:, 0], px[:, 1]
    z = dm.depth[ys, xs]
    X = (xs - cx) * z / rig.focal_length
    Y = (ys - cy) * z / rig.focal_length
    return np.column_stack([X, Y, z])


def project(points: np.ndarray, rig: CameraRig, width: int, height: int) -> np.ndarray:
    """Pinhole projection matching ``backproject``."""
    P = np.asarray(points, dtype=np.float64)
    x = P[:, 0] * rig.focal_length / P[:, 2] + width / 2.0
    y = P[:, 1] * rig.focal_length / P[:, 2] + height / 2.0
    return np.column_stack([x, y])


# ---------------------------------------------------------------------------
# meshing


def _triangle_areas_2d(pts: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    return 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def delaunay_mesh(points_2d, max_edge: float = np.inf) -> np.ndarray:
    """Delaunay triangles (T, 3) of image-plane points, minus any with an edge above ``max_edge``."""
    pts = np.asarray(points_2d, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise MeshError("need at least 3 points to triangulate")
    try:
        tri = Delaunay(pts).simplices.astype(np.int64)
    except QhullError as exc:
        raise MeshError(f"points are degenerate (collinear or coincident): {exc}") from None
    tri = tri[_triangle_areas_2d(pts, tri) > 1e-12]
    if np.isfinite(max_edge):
        e = np.stack(
            [
                np.linalg.norm(pts[tri[:, 0]] - pts[tri[:, 1]], axis=1),
                np.linalg.norm(pts[tri[:, 1]] - pts[tri[:, 2]], axis=1),
                np.linalg.norm(pts[tri[:, 2]] - pts[tri[:, 0]], axis=1),
            ],
            axis=1,
        )
        tri = tri[e.max(axis=1) <= max_edge]
    return tri


def in_circumcircle(pts: np.ndarray, tri: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Signed in-circle determinant for every (triangle, query) pair, >0 means strictly inside.

    Triangles are reoriented counter-clockwise first. Coordinates are shifted to
    each triangle's first vertex to limit cancellation.
    """
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    orient = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = orient < 0
    b2 = np.where(flip[:, None], c, b)
    c2 = np.where(flip[:, None], b, c)
    A = a[:, None, :]
    bx, by = (b2 - a)[:, None, 0], (b2 - a)[:, None, 1]
    cx, cy = (c2 - a)[:, None, 0], (c2 - a)[:, None, 1]
    dx = query[None, :, 0] - A[..., 0]
    dy = query[None, :, 1] - A[..., 1]
    b2n = bx * bx + by * by
    c2n = cx * cx + cy * cy
    d2n = dx * dx + dy * dy
    return -(bx * (cy * d2n - c2n * dy) - by * (cx * d2n - c2n * dx) + b2n * (cx * dy - cy * dx))


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3)
    uv: np.ndarray  # (V, 2)
    texture: RasterImage | None = None
    texture_file: str | None = None

    def validate(self) -> None:
        v = np.asarray(self.vertices)
        t = np.asarray(self.triangles)
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        if np.any(np.linalg.norm(np.cross(e1, e2), axis=1) == 0):
            raise MeshError("degenerate (zero-area) triangle")
        uv = np.asarray(self.uv)
        if uv.shape != (len(v), 2) or uv.min() < 0 or uv.max() > 1:
            raise MeshError("uv coordinates must be per-vertex and inside [0, 1]")

    def area(self) -> float:
        v, t = self.vertices, self.triangles
        cr = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return float(0.5 * np.linalg.norm(cr, axis=1).sum())


def build_mesh(dm: DepthMap, texture: RasterImage, rig: CameraRig, stride: int = 2, max_edge: float | None = None) -> SurfaceMesh:
    """Back-project a stride grid of valid pixels and mesh it in image space."""
    if (texture.width, texture.height) != (dm.width, dm.height):
        raise MeshError("texture and depth map differ in size")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if max_edge is None:
        max_edge = 1.5 * stride
    ys, xs = np.mgrid[0 : dm.height : stride, 0 : dm.width : stride]
    keep = dm.valid[ys, xs]
    px = np.column_stack([xs[keep], ys[keep]])
    if len(px) < 3:
        raise MeshError(f"only {len(px)} valid samples on the stride grid")
    tri = delaunay_mesh(px, max_edge)
    if len(tri) == 0:
        raise MeshError("no triangles survived the edge-length filter")
    verts = backproject(dm, rig, px)
    uv = np.column_stack([px[:, 0] / dm.width, px[:, 1] / dm.height])
    mesh = SurfaceMesh(verts, tri, uv, texture)
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# PLY


def write_ply(mesh: SurfaceMesh, path: str | os.PathLike, texture_path: str | None = None) -> None:
    """ASCII PLY with per-vertex x y z u v and triangle faces (9 significant digits)."""
    mesh.validate()
    path = os.fspath(path)
    if texture_path is None and mesh.texture is not None:
        texture_path = os.path.splitext(path)[0] + "_texture.png"
    if mesh.texture is not None and texture_path:
        save_image(mesh.texture, texture_path)
    lines = ["ply", "format ascii 1.0"]
    if texture_path:
        lines.append(f"comment TextureFile {os.path.basename(texture_path)}")
    lines += [
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property float u",
        "property float v",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = [
        " ".join(f"{c:.9g}" for c in (*xyz, *uv)) for xyz, uv in zip(mesh.vertices, mesh.uv)
    ]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    with open(path, "w") as fh:
        fh.write("\n".join(lines + body) + "\n")


def read_ply(path: str | os.PathLike) -> SurfaceMesh:
    with open(path) as fh:
        header = []
        for line in fh:
            line = line.strip()
            header.append(line)
            if line == "end_header":
                break
        rest = fh.read().split("\n")
    counts = {}
    texture_file = None
    for line in header:
        parts = line.split()
        if parts[:1] == ["element"]:
            counts[parts[1]] = int(parts[2])
        elif parts[:2] == ["comment", "TextureFile"]:
            texture_file = parts[2]
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    rows = [r for r in rest if r.strip()]
    verts = np.array([[float(x) for x in r.split()] for r in rows[:nv]]).reshape(-1, 5)
    faces = np.array([[int(x) for x in r.split()[1:4]] for r in rows[nv : nv + nf]], dtype=np.int64).reshape(-1, 3)
    return SurfaceMesh(verts[:, :3], faces, verts[:, 3:5], None, texture_file)


def write_depth(dm: DepthMap, path: str | os.PathLike) -> None:
    write_pfm(np.where(dm.valid, dm.depth, np.nan), path)
