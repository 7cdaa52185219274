"""Sparse correspondences: Harris corners, NCC window matching and RANSAC on F."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.feature import match_template

from .imgcore import RasterImage

MIN_PAIRS = 8


class TiePointError(RuntimeError):
    pass


@dataclass
class TiePointSet:
    left: np.ndarray  # (N, 2) x, y
    right: np.ndarray  # (N, 2)
    inlier: np.ndarray  # (N,) bool
    score: np.ndarray  # (N,) in [0, 1]

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64).reshape(-1, 2)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(-1, 2)
        n = len(self.left)
        if len(self.right) != n:
            raise ValueError("left and right point lists differ in length")
        self.inlier = np.ones(n, bool) if self.inlier is None else np.asarray(self.inlier, bool)
        self.score = np.ones(n) if self.score is None else np.asarray(self.score, dtype=np.float64)

    @classmethod
    def from_points(cls, left, right) -> "TiePointSet":
        return cls(left, right, None, None)

    def __len__(self) -> int:
        return len(self.left)

    @property
    def inliers(self) -> tuple[np.ndarray, np.ndarray]:
        return self.left[self.inlier], self.right[self.inlier]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("# xl yl xr yr inlier score\n")
            for (xl, yl), (xr, yr), ok, s in zip(self.left, self.right, self.inlier, self.score):
                fh.write(f"{xl:.6f} {yl:.6f} {xr:.6f} {yr:.6f} {int(ok)} {s:.6f}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TiePointSet":
        rows = np.loadtxt(path, comments="#", ndmin=2)
        if rows.shape[1] == 4:
            return cls.from_points(rows[:, :2], rows[:, 2:4])
        if rows.shape[1] != 6:
            raise TiePointError(f"{path}: expected 4 or 6 columns per line")
        return cls(rows[:, :2], rows[:, 2:4], rows[:, 4] != 0, rows[:, 5])


# ---------------------------------------------------------------------------
# corners


def harris_response(x: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    ix = ndimage.sobel(x, axis=1, mode="nearest") / 8.0
    iy = ndimage.sobel(x, axis=0, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _subpixel_offset(minus: float, centre: float, plus: float) -> float:
    denom = minus - 2 * centre + plus
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (minus - plus) / denom, -0.5, 0.5))


def detect_corners(
    img: RasterImage,
    max_count: int = 500,
    min_spacing: float = 8.0,
    sigma: float = 1.5,
    k: float = 0.04,
    rel_threshold: float = 0.01,
    min_count: int = MIN_PAIRS,
) -> np.ndarray:
    """Strongest Harris maxima, at least ``min_spacing`` apart, refined to subpixel.

    Returns an (N, 2) array of (x, y) sorted by decreasing response.
    """
    x = img.to_gray().plane
    R = harris_response(x, sigma, k)
    peak = R.max()
    if peak <= 0:
        raise TiePointError("no corner response: image is untextured")
    is_max = (R == ndimage.maximum_filter(R, size=3, mode="nearest")) & (R > rel_threshold * peak)
    ys, xs = np.nonzero(is_max)
    order = np.argsort(-R[ys, xs], kind="stable")
    ys, xs = ys[order], xs[order]
    picked: list[tuple[int, int]] = []
    min_d2 = min_spacing**2
    for yy, xx in zip(ys, xs):
        if len(picked) >= max_count:
            break
        if picked:
            p = np.asarray(picked)
            if np.min((p[:, 0] - xx) ** 2 + (p[:, 1] - yy) ** 2) < min_d2:
                continue
        picked.append((xx, yy))
    if len(picked) < min_count:
        raise TiePointError(f"only {len(picked)} corners found; input looks untextured")
    h, w = R.shape
    out = np.empty((len(picked), 2))
    for n, (xx, yy) in enumerate(picked):
        dx = _subpixel_offset(R[yy, xx - 1], R[yy, xx], R[yy, xx + 1]) if 0 < xx < w - 1 else 0.0
        dy = _subpixel_offset(R[yy - 1, xx], R[yy, xx], R[yy + 1, xx]) if 0 < yy < h - 1 else 0.0
        out[n] = (xx + dx, yy + dy)
    return out


# ---------------------------------------------------------------------------
# matching


def _best_match(src: np.ndarray, dst: np.ndarray, cx: int, cy: int, half: int, radius: int):
    """Best integer NCC position in ``dst`` for the window of ``src`` centred on (cx, cy)."""
    h, w = src.shape
    if cx - half < 0 or cy - half < 0 or cx + half >= w or cy + half >= h:
        return None
    tpl = src[cy - half : cy + half + 1, cx - half : cx + half + 1]
    if tpl.std() < 1e-6:
        return None
    x0 = max(cx - radius - half, 0)
    x1 = min(cx + radius + half + 1, w)
    y0 = max(cy - radius - half, 0)
    y1 = min(cy + radius + half + 1, h)
    region = dst[y0:y1, x0:x1]
    if region.shape[0] < tpl.shape[0] or region.shape[1] < tpl.shape[1]:
        return None
    ncc = np.nan_to_num(match_template(region, tpl), nan=-1.0)
    iy, ix = np.unravel_index(int(np.argmax(ncc)), ncc.shape)
    return x0 + ix + half, y0 + iy + half, float(ncc[iy, ix])


def _refine_translation(src: np.ndarray, dst: np.ndarray, cx: int, cy: int, bx: int, by: int, half: int):
    """Subpixel offset of the match by inverse-compositional Lucas-Kanade on a translation."""
    tpl = src[cy - half : cy + half + 1, cx - half : cx + half + 1]
    gy, gx = np.gradient(tpl)
    G = np.stack([gx.ravel(), gy.ravel()], axis=1)
    H = G.T @ G
    if np.linalg.cond(H) > 1e8:
        return 0.0, 0.0
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    p = np.zeros(2)
    for _ in range(10):
        warped = ndimage.map_coordinates(dst, [yy + by + p[1], xx + bx + p[0]], order=1, mode="nearest")
        e = (warped - tpl).ravel()
        step = np.linalg.solve(H, G.T @ e)
        p -= step
        if np.abs(p).max() > 1.0:
            return 0.0, 0.0
        if np.abs(step).max() < 1e-4:
            break
    return float(p[0]), float(p[1])


def match_corners(
    left: RasterImage,
    right: RasterImage,
    corners,
    window: int = 11,
    search_radius: int = 64,
    min_ncc: float = 0.8,
    min_count: int = MIN_PAIRS,
) -> TiePointSet:
    """NCC matches of left corners in the right image, kept when mutually best within 1 px."""
    L = left.to_gray().plane
    R = right.to_gray().plane
    if L.shape != R.shape:
        raise TiePointError("images must have the same size")
    half = window // 2
    lefts, rights, scores = [], [], []
    for x, y in np.asarray(corners, dtype=np.float64).reshape(-1, 2):
        cx, cy = int(round(x)), int(round(y))
        fwd = _best_match(L, R, cx, cy, half, search_radius)
        if fwd is None:
            continue
        bx, by, score = fwd
        if score < min_ncc:
            continue
        back = _best_match(R, L, bx, by, half, search_radius)
        if back is None or abs(back[0] - cx) > 1 or abs(back[1] - cy) > 1:
            continue
        dx, dy = _refine_translation(L, R, cx, cy, bx, by, half)
        lefts.append((x, y))
        rights.append((bx + dx + (x - cx), by + dy + (y - cy)))
        scores.append(min(max(score, 0.0), 1.0))
    if len(lefts) < min_count:
        raise TiePointError(f"only {len(lefts)} matches survived the symmetry check")
    left_pts = np.asarray(lefts)
    order = np.lexsort((left_pts[:, 0], left_pts[:, 1]))
    return TiePointSet(left_pts[order], np.asarray(rights)[order], np.ones(len(lefts), bool), np.asarray(scores)[order])


# ---------------------------------------------------------------------------
# robust epipolar consensus


def _normalizing_transform(p: np.ndarray) -> np.ndarray:
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def eight_point(m_l: np.ndarray, m_r: np.ndarray) -> np.ndarray:
    """Normalised linear estimate of F (rank 2) with m_r^T F m_l = 0."""
    Tl, Tr = _normalizing_transform(m_l), _normalizing_transform(m_r)
    pl = np.c_[m_l, np.ones(len(m_l))] @ Tl.T
    pr = np.c_[m_r, np.ones(len(m_r))] @ Tr.T
    A = np.einsum("ni,nj->nij", pr, pl).reshape(len(pl), 9)
    _, _, vt = np.linalg.svd(A)
    F = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(F)
    F = u @ np.diag([s[0], s[1], 0.0]) @ vt
    F = Tr.T @ F @ Tl
    n = np.linalg.norm(F)
    return F / n if n > 0 else F


def sampson_distance(m_l: np.ndarray, m_r: np.ndarray, F: np.ndarray) -> np.ndarray:
    pl = np.c_[m_l, np.ones(len(m_l))]
    pr = np.c_[m_r, np.ones(len(m_r))]
    Fl = pl @ F.T
    Fr = pr @ F
    num = np.einsum("ij,ij->i", pr, Fl)
    den = Fl[:, 0] ** 2 + Fl[:, 1] ** 2 + Fr[:, 0] ** 2 + Fr[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(num) / np.sqrt(den)
    return np.where(num == 0, 0.0, np.where(den > 0, d, np.inf))


def reject_outliers(
    pts: TiePointSet,
    threshold: float = 1.0,
    seed: int = 0,
    max_iterations: int = 2000,
    confidence: float = 0.999,
) -> TiePointSet:
    """MSAC over 8-point fundamental matrices; marks pairs within ``threshold`` px Sampson distance."""
    n = len(pts)
    if n < MIN_PAIRS:
        raise TiePointError(f"need at least {MIN_PAIRS} pairs, got {n}")
    ml, mr = pts.left, pts.right
    rng = np.random.default_rng(seed)
    best = np.zeros(n, bool)
    best_cost = np.inf
    t2 = threshold**2
    needed = max_iterations
    it = 0
    while it < min(needed, max_iterations):
        it += 1
        sample = rng.choice(n, MIN_PAIRS, replace=False)
        F = eight_point(ml[sample], mr[sample])
        d = sampson_distance(ml, mr, F)
        inl = d <= threshold
        # truncated quadratic score: a tight fit beats a loose one with a couple more hits
        cost = float(np.minimum(d * d, t2).sum())
        if cost < best_cost:
            best, best_cost = inl, cost
            frac = inl.mean()
            if frac >= 1.0:
                needed = it
            elif frac ** MIN_PAIRS < 1e-12:
                needed = max_iterations
            else:
                needed = int(np.ceil(np.log(1 - confidence) / np.log(1 - frac**MIN_PAIRS)))
    if best.sum() < MIN_PAIRS:
        raise TiePointError(f"consensus support {int(best.sum())} below {MIN_PAIRS}")
    # refit on the consensus set; keep the refit only if it scores better
    for _ in range(3):
        F = eight_point(ml[best], mr[best])
        d = sampson_distance(ml, mr, F)
        inl = d <= threshold
        cost = float(np.minimum(d * d, t2).sum())
        if inl.sum() < MIN_PAIRS or cost >= best_cost or np.array_equal(inl, best):
            break
        best, best_cost = inl, cost
    return TiePointSet(ml, mr, best.copy(), pts.score)


def find_tiepoints(left: RasterImage, right: RasterImage, **kw) -> TiePointSet:
    corner_kw = {k: kw.pop(k) for k in ("max_count", "min_spacing") if k in kw}
    match_kw = {k: kw.pop(k) for k in ("window", "search_radius", "min_ncc") if k in kw}
    corners = detect_corners(left, **corner_kw)
    matches = match_corners(left, right, corners, **match_kw)
    return reject_outliers(matches, **kw)
