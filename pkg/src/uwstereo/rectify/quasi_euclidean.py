"""Quasi-Euclidean rectification of an uncalibrated stereo pair.

Both rectifying collineations have the calibrated form ``K R K^-1`` with a
shared guessed intrinsic matrix (square pixels, centred principal point,
unknown focal length). Six parameters are estimated from tie points by
minimising the Sampson error of the fundamental matrix they imply:

    params = (left_y, left_z, right_x, right_y, right_z, alpha_prime)

with focal length ``(w + h) * 3 ** alpha_prime``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..imgcore import RasterImage
from .lm import LMDivergence, levenberg_marquardt

N_PARAMS = 6


class RectificationError(RuntimeError):
    pass


def skew_u1() -> np.ndarray:
    """Fundamental matrix of a rectified pair: the cross-product matrix of (1, 0, 0)."""
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _rx(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _ry(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rotation_xyz(ax: float, ay: float, az: float) -> np.ndarray:
    return _rx(ax) @ _ry(ay) @ _rz(az)


def focal_from_alpha_prime(alpha_prime: float, w: float, h: float) -> float:
    return (w + h) * 3.0**alpha_prime


def guessed_intrinsics(alpha_prime: float, w: float, h: float) -> np.ndarray:
    a = focal_from_alpha_prime(alpha_prime, w, h)
    return np.array([[a, 0.0, w / 2.0], [0.0, a, h / 2.0], [0.0, 0.0, 1.0]])


def rotations(params) -> tuple[np.ndarray, np.ndarray]:
    yl, zl, xr, yr, zr = params[:5]
    return rotation_xyz(0.0, yl, zl), rotation_xyz(xr, yr, zr)


def build_F(params, w: float, h: float) -> np.ndarray:
    """Fundamental matrix implied by the six rectification parameters."""
    params = np.asarray(params, dtype=np.float64)
    K = guessed_intrinsics(params[5], w, h)
    Kinv = np.linalg.inv(K)
    R_l, R_r = rotations(params)
    return Kinv.T @ R_r.T @ skew_u1() @ R_l @ Kinv


def _homogeneous(pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.shape[-1] == 2:
        pts = np.hstack([pts, np.ones((pts.shape[0], 1))])
    return pts


def sampson_residuals(m_l, m_r, F: np.ndarray) -> np.ndarray:
    """Signed Sampson distances (their squares are the per-pair Sampson errors)."""
    ml, mr = _homogeneous(m_l), _homogeneous(m_r)
    Fml = ml @ F.T
    mrF = mr @ F
    num = np.einsum("ij,ij->i", mr, Fml)
    den = Fml[:, 0] ** 2 + Fml[:, 1] ** 2 + mrF[:, 0] ** 2 + mrF[:, 1] ** 2
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / np.sqrt(den[nz])
    if np.any(~nz & (num != 0)):
        raise RectificationError("degenerate epipolar geometry: zero Sampson denominator")
    return out


def sampson_error(pair, F: np.ndarray) -> float:
    """Squared Sampson error of one correspondence ``(m_l, m_r)``."""
    m_l, m_r = pair
    F = np.asarray(F, dtype=np.float64)
    ml, mr = _homogeneous([m_l[:2]])[0], _homogeneous([m_r[:2]])[0]
    Fml, mrF = F @ ml, mr @ F
    num = float(mr @ Fml)
    den = float(Fml[0] ** 2 + Fml[1] ** 2 + mrF[0] ** 2 + mrF[1] ** 2)
    if den == 0:
        if num != 0:
            raise RectificationError("degenerate epipolar geometry: zero Sampson denominator")
        return 0.0
    return num * num / den


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    p = _homogeneous(pts) @ np.asarray(H).T
    return p[:, :2] / p[:, 2:3]


@dataclass
class RectificationModel:
    H_left: np.ndarray
    H_right: np.ndarray
    angles: np.ndarray  # left (y, z), right (x, y, z), radians
    alpha_prime: float
    K_old: np.ndarray
    K_new_left: np.ndarray
    K_new_right: np.ndarray
    residual_rms: float
    width: int = 0
    height: int = 0
    info: dict = field(default_factory=dict)

    @classmethod
    def identity(cls, w: int, h: int) -> "RectificationModel":
        K = guessed_intrinsics(0.0, w, h)
        I = np.eye(3)
        return cls(I, I.copy(), np.zeros(5), 0.0, K, K.copy(), K.copy(), 0.0, w, h)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.angles, [self.alpha_prime]])

    def to_dict(self) -> dict:
        return {
            "H_left": np.asarray(self.H_left).ravel().tolist(),
            "H_right": np.asarray(self.H_right).ravel().tolist(),
            "angles": np.asarray(self.angles).tolist(),
            "alpha_prime": float(self.alpha_prime),
            "residual_rms": float(self.residual_rms),
            "width": int(self.width),
            "height": int(self.height),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RectificationModel":
        w, h = d.get("width", 0), d.get("height", 0)
        K = guessed_intrinsics(d["alpha_prime"], w, h)
        Hl = np.asarray(d["H_left"], dtype=np.float64).reshape(3, 3)
        Hr = np.asarray(d["H_right"], dtype=np.float64).reshape(3, 3)
        R_l, R_r = rotations(np.asarray(d["angles"]))
        Knl = Hl @ K @ R_l.T
        Knr = Hr @ K @ R_r.T
        return cls(Hl, Hr, np.asarray(d["angles"], dtype=np.float64), d["alpha_prime"], K, Knl, Knr,
                   d["residual_rms"], w, h, d.get("info", {}))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RectificationModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _centering_shifts(H_l, H_r, w, h):
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    cl = apply_homography(H_l, corners).mean(axis=0)
    cr = apply_homography(H_r, corners).mean(axis=0)
    centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    # vertical shift must be common to both images to keep rows aligned
    ty = centre[1] - 0.5 * (cl[1] + cr[1])
    return (centre[0] - cl[0], ty), (centre[0] - cr[0], ty)


def model_from_params(params, w: int, h: int, residual_rms: float = 0.0, info=None) -> RectificationModel:
    params = np.asarray(params, dtype=np.float64)
    K = guessed_intrinsics(params[5], w, h)
    Kinv = np.linalg.inv(K)
    R_l, R_r = rotations(params)
    H_l = K @ R_l @ Kinv
    H_r = K @ R_r @ Kinv
    (txl, ty), (txr, _) = _centering_shifts(H_l, H_r, w, h)
    T_l = np.array([[1.0, 0, txl], [0, 1.0, ty], [0, 0, 1.0]])
    T_r = np.array([[1.0, 0, txr], [0, 1.0, ty], [0, 0, 1.0]])
    return RectificationModel(
        T_l @ H_l, T_r @ H_r, params[:5].copy(), float(params[5]), K, T_l @ K, T_r @ K,
        residual_rms, w, h, dict(info or {}),
    )


def estimate_rectification(m_l, m_r, w: int, h: int, seed: int = 0, **lm_options) -> RectificationModel:
    """Fit the six rectification parameters to inlier tie points.

    Starts from all zeros. If the focal parameter leaves [-1, 1], one
    seeded random restart is tried; if that also escapes, the five angles
    are re-fitted with the focal parameter pinned to 0.
    """
    m_l = np.asarray(m_l, dtype=np.float64)
    m_r = np.asarray(m_r, dtype=np.float64)
    if len(m_l) < 8 or len(m_l) != len(m_r):
        raise RectificationError("need at least 8 matched tie points")

    def residuals(x):
        return sampson_residuals(m_l, m_r, build_F(x, w, h))

    info = {"restarts": 0, "fixed_focal": False}
    try:
        res = levenberg_marquardt(residuals, np.zeros(N_PARAMS), **lm_options)
        if abs(res.x[5]) > 1.0:
            rng = np.random.default_rng(seed)
            x0 = np.concatenate([rng.uniform(-0.1, 0.1, 5), rng.uniform(-0.5, 0.5, 1)])
            info["restarts"] = 1
            res = levenberg_marquardt(residuals, x0, **lm_options)
        if abs(res.x[5]) > 1.0:
            info["fixed_focal"] = True
            res5 = levenberg_marquardt(lambda a: residuals(np.append(a, 0.0)), np.zeros(5), **lm_options)
            res = type(res5)(np.append(res5.x, 0.0), res5.cost, res5.iterations, res5.converged)
    except LMDivergence as exc:
        raise RectificationError(f"Levenberg-Marquardt diverged: {exc}") from exc
    rms = float(np.sqrt(res.cost / len(m_l)))
    info.update(iterations=res.iterations, converged=bool(res.converged))
    return model_from_params(res.x, w, h, rms, info)


# ---------------------------------------------------------------------------
# warping


@dataclass
class RectifiedPair:
    left: RasterImage
    right: RasterImage
    model: RectificationModel
    valid_left: tuple[int, int, int, int]  # x0, x1, y0, y1 (half-open)
    valid_right: tuple[int, int, int, int]
    mask_left: np.ndarray | None = None
    mask_right: np.ndarray | None = None


def _largest_valid_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return (0, 0, 0, 0)
    x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
    while x1 > x0 and y1 > y0:
        sub = mask[y0:y1, x0:x1]
        if sub.all():
            break
        # peel the border line with the most unmapped pixels
        bad = [(~sub[:, 0]).sum(), (~sub[:, -1]).sum(), (~sub[0, :]).sum(), (~sub[-1, :]).sum()]
        k = int(np.argmax(bad))
        if k == 0:
            x0 += 1
        elif k == 1:
            x1 -= 1
        elif k == 2:
            y0 += 1
        else:
            y1 -= 1
    return (int(x0), int(x1), int(y0), int(y1))


def warp_image(img: RasterImage, H: np.ndarray) -> tuple[RasterImage, np.ndarray]:
    """Inverse-map ``img`` through ``H`` with bilinear interpolation; returns image and mapped mask."""
    H = np.asarray(H, dtype=np.float64)
    if abs(np.linalg.det(H)) < 1e-12:
        raise RectificationError("degenerate homography")
    h, w = img.height, img.width
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src = np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    src = np.linalg.inv(H) @ src
    sx = (src[0] / src[2]).reshape(h, w)
    sy = (src[1] / src[2]).reshape(h, w)
    # snap round-off so identity-like maps reproduce the input exactly
    rx, ry = np.rint(sx), np.rint(sy)
    sx = np.where(np.abs(sx - rx) < 1e-9, rx, sx)
    sy = np.where(np.abs(sy - ry) < 1e-9, ry, sy)
    mask = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    out = np.empty_like(img.data)
    for c in range(img.channels):
        out[:, :, c] = ndimage.map_coordinates(img.data[:, :, c], [sy, sx], order=1, mode="constant", cval=0.0)
    out[~mask] = 0.0
    return RasterImage(out, img.colorspace), mask


def warp_pair(left: RasterImage, right: RasterImage, model: RectificationModel) -> RectifiedPair:
    if (left.width, left.height) != (right.width, right.height):
        raise RectificationError("left and right images differ in size")
    wl, ml = warp_image(left, model.H_left)
    wr, mr = warp_image(right, model.H_right)
    return RectifiedPair(wl, wr, model, _largest_valid_box(ml), _largest_valid_box(mr), ml, mr)


def vertical_disparity_rms(m_l, m_r, model: RectificationModel | None = None) -> float:
    """RMS of y_left - y_right over tie points, after the model's collineations if given."""
    a = np.asarray(m_l, dtype=np.float64)
    b = np.asarray(m_r, dtype=np.float64)
    if model is not None:
        a = apply_homography(model.H_left, a)
        b = apply_homography(model.H_right, b)
    return float(np.sqrt(np.mean((a[:, 1] - b[:, 1]) ** 2)))
