"""Synthetic stereo scenes with exact ground truth, and a degradation model.

Textures are seeded value noise evaluated at continuous coordinates, so both
views of a scene sample the same surface texture and the right image is
consistent with the ground-truth geometry by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .imgcore import ColorSpace, RasterImage

_TINT_A = np.array([0.55, 0.80, 0.90])
_TINT_B = np.array([0.95, 0.70, 0.45])


class SceneKind(str, enum.Enum):
    SHIFTED_TEXTURE = "shifted_texture"
    TWO_PLANE = "two_plane"
    SPHERE_PATCH = "sphere_patch"
    ROTATED_CAMERA_PAIR = "rotated_camera_pair"


@dataclass(frozen=True)
class SyntheticScene:
    kind: SceneKind
    shift: int = 5
    plane_disparities: tuple[int, int] = (3, 8)
    sphere_radius: float = 0.5
    sphere_distance: float = 2.0
    background_depth: float = 2.6
    rotation_deg: float = 5.0
    focal_length: float = 200.0
    baseline: float = 0.1
    texture_cell: float = 6.0
    texture_contrast: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SceneKind(self.kind))
        if self.texture_contrast <= 0:
            raise ValueError("texture contrast must be positive")
        if self.texture_cell <= 0 or self.focal_length <= 0 or self.baseline <= 0:
            raise ValueError("texture cell, focal length and baseline must be positive")
        if self.kind is SceneKind.SPHERE_PATCH:
            if self.sphere_radius <= 0 or self.sphere_distance <= self.sphere_radius:
                raise ValueError("sphere must have positive radius and lie in front of the camera")
            if self.background_depth <= self.sphere_distance:
                raise ValueError("background must lie behind the sphere centre")


@dataclass
class PinholeCamera:
    K: np.ndarray
    R: np.ndarray  # world -> camera rotation
    center: np.ndarray  # camera centre in world coordinates

    @property
    def P(self) -> np.ndarray:
        return self.K @ np.hstack([self.R, (-self.R @ self.center)[:, None]])

    def project(self, X: np.ndarray) -> np.ndarray:
        """Project (N, 3) world points to (N, 2) pixels."""
        Xc = (np.asarray(X) - self.center) @ self.R.T
        uvw = Xc @ self.K.T
        return uvw[:, :2] / uvw[:, 2:3]

    def rays(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """World-frame ray directions (..., 3) through pixels, scaled to unit depth in camera z."""
        pix = np.stack([u, v, np.ones_like(u)], axis=-1)
        d_cam = pix @ np.linalg.inv(self.K).T
        return d_cam @ self.R


@dataclass
class SceneTruth:
    disparity: np.ndarray  # left-referenced, float
    valid: np.ndarray  # truth defined and match inside the right image
    depth: np.ndarray | None = None
    surface: dict = field(default_factory=dict)
    cameras: tuple[PinholeCamera, PinholeCamera] | None = None


# ---------------------------------------------------------------------------
# procedural texture


def _lattice_uniform(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    # splitmix64-style integer hash of the lattice coordinates
    h = ix.astype(np.int64).view(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.int64).view(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(x, y, seed: int = 0, cell: float = 6.0, octaves: int = 3) -> np.ndarray:
    """Fractal value noise in [0, 1] evaluated at arbitrary coordinates."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = np.zeros(np.broadcast(x, y).shape)
    norm = 0.0
    amp = 1.0
    for o in range(octaves):
        c = cell / 2**o
        gx, gy = x / c, y / c
        x0, y0 = np.floor(gx), np.floor(gy)
        tx, ty = _fade(gx - x0), _fade(gy - y0)
        s = seed * 131 + o
        v00 = _lattice_uniform(x0, y0, s)
        v10 = _lattice_uniform(x0 + 1, y0, s)
        v01 = _lattice_uniform(x0, y0 + 1, s)
        v11 = _lattice_uniform(x0 + 1, y0 + 1, s)
        top = v00 + (v10 - v00) * tx
        bot = v01 + (v11 - v01) * tx
        total += amp * (top + (bot - top) * ty)
        norm += amp
        amp *= 0.5
    return total / norm


def _stretch(t: np.ndarray, contrast: float) -> np.ndarray:
    # value noise concentrates near 0.5; widen it before applying contrast
    return np.clip(0.5 + contrast * 2.2 * (t - 0.5), 0.0, 1.0) if contrast else t


def textured_rgb(x, y, seed: int, cell: float, contrast: float) -> np.ndarray:
    """RGB texture at coordinates (x, y); luminance from one noise field, hue from another."""
    lum = _stretch(value_noise(x, y, seed, cell), contrast)
    hue = value_noise(x, y, seed + 7919, cell * 4, octaves=1)[..., None]
    tint = hue * _TINT_A + (1 - hue) * _TINT_B
    return np.clip(0.1 + 0.85 * lum[..., None] * tint, 0.0, 1.0)


# ---------------------------------------------------------------------------
# scene rendering


def generate_scene(s: SyntheticScene, width: int, height: int, seed: int = 0):
    """Render a stereo pair and its ground truth. Returns (left, right, truth)."""
    if width < 4 or height < 4:
        raise ValueError("scene must be at least 4x4 pixels")
    if s.kind is SceneKind.SHIFTED_TEXTURE:
        return _shifted_texture(s, width, height, seed)
    if s.kind is SceneKind.TWO_PLANE:
        return _two_plane(s, width, height, seed)
    if s.kind is SceneKind.SPHERE_PATCH:
        return _sphere_patch(s, width, height, seed)
    return _rotated_pair(s, width, height, seed)


def _grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))


def _shifted_texture(s: SyntheticScene, w: int, h: int, seed: int):
    x, y = _grid(w, h)
    left = textured_rgb(x, y, seed, s.texture_cell, s.texture_contrast)
    # left(x, y) == right(x - shift, y)
    right = textured_rgb(x + s.shift, y, seed, s.texture_cell, s.texture_contrast)
    disp = np.full((h, w), float(s.shift))
    valid = x - s.shift >= 0
    truth = SceneTruth(disp, valid, surface={"kind": "plane", "disparity": s.shift})
    return RasterImage.rgb(left), RasterImage.rgb(right), truth


def two_plane_foreground(w: int, h: int) -> tuple[int, int, int, int]:
    """Foreground rectangle (x0, x1, y0, y1) in left-image pixels, half-open."""
    return w // 4, (3 * w) // 4, h // 4, (3 * h) // 4


def _two_plane(s: SyntheticScene, w: int, h: int, seed: int):
    d_bg, d_fg = s.plane_disparities
    if d_fg <= d_bg:
        raise ValueError("foreground disparity must exceed background disparity")
    x0, x1, y0, y1 = two_plane_foreground(w, h)
    x, y = _grid(w, h)

    def in_fg(xx):
        return (xx >= x0) & (xx < x1) & (y >= y0) & (y < y1)

    def tex(xx, fg):
        a = textured_rgb(xx, y, seed, s.texture_cell, s.texture_contrast)
        b = textured_rgb(xx, y, seed + 1, s.texture_cell, s.texture_contrast)
        return np.where(fg[..., None], b, a)

    left = tex(x, in_fg(x))
    fg_r = in_fg(x + d_fg)
    # the foreground occludes the background wherever it projects
    xs = np.where(fg_r, x + d_fg, x + d_bg)
    right = tex(xs, fg_r)
    disp = np.where(in_fg(x), float(d_fg), float(d_bg))
    valid = x - disp >= 0
    truth = SceneTruth(
        disp, valid, surface={"kind": "two_plane", "foreground": [x0, x1, y0, y1], "disparities": [d_bg, d_fg]}
    )
    return RasterImage.rgb(left), RasterImage.rgb(right), truth


def _intrinsics(f: float, w: int, h: int) -> np.ndarray:
    return np.array([[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]])


def _sphere_hit(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float):
    """Parameter t of the nearest ray/sphere hit (NaN where missed)."""
    oc = origin - center
    a = np.einsum("...i,...i->...", dirs, dirs)
    b = 2.0 * np.einsum("...i,i->...", dirs, oc)
    c = oc @ oc - radius**2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where(disc >= 0, t, np.nan)


def _surface_texture(P: np.ndarray, s: SyntheticScene, seed: int) -> np.ndarray:
    # texture in world units so both cameras see the same pattern
    scale = s.focal_length / s.sphere_distance
    return textured_rgb(P[..., 0] * scale, P[..., 1] * scale, seed, s.texture_cell, s.texture_contrast)


def _render_sphere_view(cam: PinholeCamera, s: SyntheticScene, w: int, h: int, seed: int):
    u, v = _grid(w, h)
    dirs = cam.rays(u, v)
    center = np.array([0.0, 0.0, s.sphere_distance])
    t_s = _sphere_hit(cam.center, dirs, center, s.sphere_radius)
    t_bg = (s.background_depth - cam.center[2]) / dirs[..., 2]
    hit = np.isfinite(t_s)
    t = np.where(hit, t_s, t_bg)
    P = cam.center + t[..., None] * dirs
    return _surface_texture(P, s, seed), P, hit


def sphere_cameras(s: SyntheticScene, w: int, h: int) -> tuple[PinholeCamera, PinholeCamera]:
    K = _intrinsics(s.focal_length, w, h)
    left = PinholeCamera(K, np.eye(3), np.zeros(3))
    right = PinholeCamera(K, np.eye(3), np.array([s.baseline, 0.0, 0.0]))
    return left, right


def _sphere_patch(s: SyntheticScene, w: int, h: int, seed: int):
    cam_l, cam_r = sphere_cameras(s, w, h)
    left, P, hit = _render_sphere_view(cam_l, s, w, h, seed)
    right, _, _ = _render_sphere_view(cam_r, s, w, h, seed)
    depth = P[..., 2]
    disp = s.focal_length * s.baseline / depth
    x, _ = _grid(w, h)
    valid = x - disp >= 0
    surface = {
        "kind": "sphere",
        "center": [0.0, 0.0, s.sphere_distance],
        "radius": s.sphere_radius,
        "background_depth": s.background_depth,
        "on_sphere": hit,
    }
    truth = SceneTruth(disp, valid, depth=depth, surface=surface, cameras=(cam_l, cam_r))
    return RasterImage.rgb(left), RasterImage.rgb(right), truth


def rot_x(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def relief_depth(X: np.ndarray, Y: np.ndarray, base: float) -> np.ndarray:
    """Gently undulating surface used by the rotated-camera scene."""
    return base + 0.12 * np.sin(2.1 * X) * np.cos(1.7 * Y) + 0.05 * X


def rotated_cameras(s: SyntheticScene, w: int, h: int) -> tuple[PinholeCamera, PinholeCamera]:
    K = _intrinsics(s.focal_length, w, h)
    left = PinholeCamera(K, np.eye(3), np.zeros(3))
    # right camera sits on the +X baseline and is panned toward the left one
    R = rot_y(np.deg2rad(s.rotation_deg))
    right = PinholeCamera(K, R, np.array([s.baseline, 0.0, 0.0]))
    return left, right


def _render_relief_view(cam: PinholeCamera, s: SyntheticScene, w: int, h: int, seed: int):
    u, v = _grid(w, h)
    dirs = cam.rays(u, v)
    t = (s.sphere_distance - cam.center[2]) / dirs[..., 2]
    for _ in range(60):
        P = cam.center + t[..., None] * dirs
        t = (relief_depth(P[..., 0], P[..., 1], s.sphere_distance) - cam.center[2]) / dirs[..., 2]
    P = cam.center + t[..., None] * dirs
    return _surface_texture(P, s, seed), P


def sample_relief_points(s: SyntheticScene, w: int, h: int, n: int, seed: int = 0, margin: float = 0.05):
    """Random 3-D points on the relief surface visible in both cameras of the rotated pair."""
    cam_l, cam_r = rotated_cameras(s, w, h)
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        u = rng.uniform(margin * w, (1 - margin) * w, 4 * n)
        v = rng.uniform(margin * h, (1 - margin) * h, 4 * n)
        dirs = cam_l.rays(u, v)
        t = s.sphere_distance / dirs[:, 2]
        for _ in range(60):
            P = t[:, None] * dirs
            t = relief_depth(P[:, 0], P[:, 1], s.sphere_distance) / dirs[:, 2]
        P = t[:, None] * dirs
        q = cam_r.project(P)
        ok = (q[:, 0] > margin * w) & (q[:, 0] < (1 - margin) * w) & (q[:, 1] > margin * h) & (q[:, 1] < (1 - margin) * h)
        pts.extend(P[ok])
    return np.asarray(pts[:n]), cam_l, cam_r


def _rotated_pair(s: SyntheticScene, w: int, h: int, seed: int):
    cam_l, cam_r = rotated_cameras(s, w, h)
    left, P = _render_relief_view(cam_l, s, w, h, seed)
    right, _ = _render_relief_view(cam_r, s, w, h, seed)
    depth = P[..., 2]
    truth = SceneTruth(
        np.full((h, w), np.nan),
        np.zeros((h, w), bool),
        depth=depth,
        surface={"kind": "relief", "base_depth": s.sphere_distance},
        cameras=(cam_l, cam_r),
    )
    return RasterImage.rgb(left), RasterImage.rgb(right), truth


def fundamental_from_cameras(cam_l: PinholeCamera, cam_r: PinholeCamera) -> np.ndarray:
    """F with m_r^T F m_l = 0 for the two pinhole cameras."""
    R = cam_r.R @ cam_l.R.T
    t = cam_r.R @ (cam_l.center - cam_r.center)
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    E = tx @ R
    return np.linalg.inv(cam_r.K).T @ E @ np.linalg.inv(cam_l.K)


# ---------------------------------------------------------------------------
# degradation


def illumination_field(width: int, height: int, ramp: tuple[float, float]) -> np.ndarray:
    lo, hi = ramp
    return np.broadcast_to(np.linspace(lo, hi, width)[None, :], (height, width))


def degrade_scene(
    img: RasterImage,
    illumination_ramp: tuple[float, float] | None = None,
    noise_sigma: float = 0.0,
    color_cast: tuple[float, float, float] | None = None,
    seed: int = 0,
) -> RasterImage:
    """Multiply by a smooth horizontal illumination ramp, cast the colours, add Gaussian noise.

    No clipping is applied, so the degradations stay exactly invertible in
    tests; 8-bit export clips.
    """
    out = img.data.copy()
    if illumination_ramp is not None:
        out = out * illumination_field(img.width, img.height, illumination_ramp)[..., None]
    if color_cast is not None:
        if img.channels != 3:
            raise ValueError("colour cast needs an RGB image")
        out = out * np.asarray(color_cast, dtype=np.float64)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, out.shape)
    return RasterImage(out, img.colorspace)
