"""Dense disparity by alpha-expansion on a data + smoothness energy.

Convention: the left image is the reference and disparity ``d`` pairs the
left pixel (x, y) with the right pixel (x - d, y).

Energies are handled as integers: data costs and the smoothness unit are
scaled by ``ENERGY_SCALE`` and rounded before graph construction so every
min-cut is computed exactly.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..imgcore import RasterImage, write_pfm, write_pgm16
from .maxflow import GridFlow

ENERGY_SCALE = 1000


class SmoothnessForm(str, enum.Enum):
    TRUNCATED_LINEAR = "truncated_linear"
    POTTS = "potts"


@dataclass(frozen=True)
class StereoEnergyParams:
    disparity_min: int = 0
    disparity_max: int = 16
    smoothness_weight: float = 0.02
    truncation: float = 0.2
    smoothness_form: SmoothnessForm = SmoothnessForm.TRUNCATED_LINEAR
    smoothness_truncation: int = 2
    seed: int = 0
    lr_check: bool = True

    def __post_init__(self):
        if self.disparity_max <= self.disparity_min:
            raise ValueError("empty label range: disparity_max must exceed disparity_min")
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")
        if self.truncation <= 0:
            raise ValueError("truncation must be positive")
        if self.smoothness_truncation < 1:
            raise ValueError("smoothness_truncation must be >= 1")
        object.__setattr__(self, "smoothness_form", SmoothnessForm(self.smoothness_form))

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.disparity_min, self.disparity_max + 1)

    @property
    def n_labels(self) -> int:
        return self.disparity_max - self.disparity_min + 1


@dataclass
class DisparityMap:
    labels: np.ndarray  # (H, W) int disparities
    valid: np.ndarray  # (H, W) bool
    energy: int = 0
    disparity_min: int = 0
    disparity_max: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


# ---------------------------------------------------------------------------
# energy terms


def _as_gray(img) -> np.ndarray:
    if isinstance(img, RasterImage):
        return img.to_gray().plane
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a gray image")
    return a


def _half_sample_range(row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Min/max of the linearly interpolated signal within half a pixel, per sample."""
    left = np.concatenate([row[..., :1], row[..., :-1]], axis=-1)
    right = np.concatenate([row[..., 1:], row[..., -1:]], axis=-1)
    minus = 0.5 * (row + left)
    plus = 0.5 * (row + right)
    lo = np.minimum(row, np.minimum(minus, plus))
    hi = np.maximum(row, np.maximum(minus, plus))
    return lo, hi


def sampling_insensitive_cost(left: np.ndarray, right: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Birchfield-Tomasi dissimilarity for all pixels at disparity ``d``.

    Returns the untruncated cost and a boolean map of pixels whose match
    lies outside the right image.
    """
    h, w = left.shape
    xs = np.arange(w) - d
    inside = (xs >= 0) & (xs < w)
    xr = np.clip(xs, 0, w - 1)
    r = right[:, xr]
    r_lo, r_hi = _half_sample_range(right)
    r_lo, r_hi = r_lo[:, xr], r_hi[:, xr]
    l_lo, l_hi = _half_sample_range(left)
    d_lr = np.maximum(0.0, np.maximum(left - r_hi, r_lo - left))
    d_rl = np.maximum(0.0, np.maximum(r - l_hi, l_lo - r))
    cost = np.minimum(d_lr, d_rl)
    outside = np.broadcast_to(~inside, (h, w))
    return cost, outside


def data_term(left, right, p: tuple[int, int], d: int, params: StereoEnergyParams) -> float:
    """Truncated matching cost of left pixel ``p = (x, y)`` at disparity ``d`` (gray units)."""
    L, R = _as_gray(left), _as_gray(right)
    x, y = p
    cost, outside = sampling_insensitive_cost(L[y : y + 1], R[y : y + 1], d)
    if outside[0, x]:
        return params.truncation
    return float(min(params.truncation, cost[0, x]))


def unary_costs(left, right, params: StereoEnergyParams) -> tuple[np.ndarray, np.ndarray]:
    """Integer data costs (n_labels, H, W) and the matching out-of-image mask."""
    L, R = _as_gray(left), _as_gray(right)
    if L.shape != R.shape:
        raise ValueError("left and right images must have the same size")
    costs = np.empty((params.n_labels,) + L.shape, dtype=np.int64)
    border = np.empty((params.n_labels,) + L.shape, dtype=bool)
    for k, d in enumerate(params.labels):
        c, outside = sampling_insensitive_cost(L, R, int(d))
        c = np.where(outside, params.truncation, np.minimum(c, params.truncation))
        costs[k] = np.rint(c * ENERGY_SCALE).astype(np.int64)
        border[k] = outside
    return costs, border


def smoothness_unit(params: StereoEnergyParams) -> int:
    return int(round(params.smoothness_weight * ENERGY_SCALE))


def pairwise_table(params: StereoEnergyParams) -> np.ndarray:
    """Integer V(a, b) over label indices; the unit is rounded once so V stays a metric."""
    unit = smoothness_unit(params)
    k = np.arange(params.n_labels)
    diff = np.abs(k[:, None] - k[None, :])
    if params.smoothness_form is SmoothnessForm.POTTS:
        return unit * (diff > 0).astype(np.int64)
    return unit * np.minimum(diff, params.smoothness_truncation).astype(np.int64)


def _neighbor_pairs(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(h * w).reshape(h, w)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return p, q


def labeling_energy(idx: np.ndarray, unary: np.ndarray, pair: np.ndarray) -> int:
    """Total energy of a label-index field under integer unary and pairwise tables."""
    h, w = idx.shape
    flat = idx.ravel()
    e = int(unary.reshape(unary.shape[0], -1)[flat, np.arange(h * w)].sum())
    p, q = _neighbor_pairs(h, w)
    e += int(pair[flat[p], flat[q]].sum())
    return e


def energy_of(labels: DisparityMap | np.ndarray, params: StereoEnergyParams, left, right) -> int:
    """Energy of a labeling in integer units (``ENERGY_SCALE`` per gray level)."""
    lab = labels.labels if isinstance(labels, DisparityMap) else np.asarray(labels)
    unary, _ = unary_costs(left, right, params)
    return labeling_energy(lab - params.disparity_min, unary, pairwise_table(params))


# ---------------------------------------------------------------------------
# expansion move


def expand_labels(idx: np.ndarray, alpha: int, unary: np.ndarray, pair: np.ndarray) -> tuple[np.ndarray, int]:
    """Optimal alpha-expansion of a label-index field.

    Every pixel either keeps its label or switches to ``alpha``; the best of
    all such labelings is found with one min-cut. Returns the new field and
    its energy. Nodes on the sink side of the cut take ``alpha``.
    """
    h, w = idx.shape
    n = h * w
    flat = idx.ravel()
    pix = np.arange(n)
    U = unary.reshape(unary.shape[0], -1)
    cost_keep = U[flat, pix].copy()
    cost_alpha = U[alpha, pix].copy()
    cost_alpha[flat == alpha] = cost_keep[flat == alpha]

    p, q = _neighbor_pairs(h, w)
    fp, fq = flat[p], flat[q]
    e00 = pair[fp, fq]
    e01 = pair[fp, alpha]
    e10 = pair[alpha, fq]
    e11 = np.zeros_like(e00)
    e11[:] = pair[alpha, alpha]
    coupling = e01 + e10 - e00 - e11
    if np.any(coupling < 0):
        raise AssertionError("pairwise term is not submodular for this expansion")

    # E(xp, xq) = e00 + (e10 - e00) xp + (e11 - e10) xq + coupling (1 - xp) xq
    lin = cost_alpha - cost_keep
    constant = int(cost_keep.sum()) + int(e00.sum())
    np.add.at(lin, p, e10 - e00)
    np.add.at(lin, q, e11 - e10)
    # x = 1 (take alpha) is paid by the source arc, x = 0 by the sink arc
    src = np.where(lin > 0, lin, 0)
    snk = np.where(lin < 0, -lin, 0)
    constant += int(lin[lin < 0].sum())

    keep = coupling > 0
    g = GridFlow(n)
    g.set_terminals(src, snk)
    g.set_edges(p[keep], q[keep], coupling[keep], np.zeros(int(keep.sum()), np.int64))
    flow = g.solve()
    take = ~g.source_side()
    new = np.where(take, alpha, flat).reshape(h, w)
    return new, flow + constant


def expansion_move(labels: DisparityMap, alpha: int, params: StereoEnergyParams, left, right) -> DisparityMap:
    """Apply the best alpha-expansion to ``labels`` (alpha given as a disparity)."""
    if not params.disparity_min <= alpha <= params.disparity_max:
        raise ValueError(f"alpha {alpha} outside label range")
    unary, border = unary_costs(left, right, params)
    pair = pairwise_table(params)
    idx = labels.labels - params.disparity_min
    current = labeling_energy(idx, unary, pair)
    new, e = expand_labels(idx, alpha - params.disparity_min, unary, pair)
    if e >= current:
        new, e = idx, current
    lab = new + params.disparity_min
    valid = ~np.take_along_axis(border, new[None], axis=0)[0]
    return DisparityMap(lab, valid, e, params.disparity_min, params.disparity_max)


# ---------------------------------------------------------------------------
# full solver


def minimize_expansion(unary: np.ndarray, pair: np.ndarray, seed: int = 0, init: np.ndarray | None = None):
    """Expansion sweeps until a full sweep yields no strict improvement.

    Returns (label-index field, energy, stats).
    """
    n_labels = unary.shape[0]
    idx = unary.argmin(axis=0) if init is None else init.copy()
    energy = labeling_energy(idx, unary, pair)
    rng = np.random.default_rng(seed)
    sweeps = moves = 0
    history = [energy]
    while True:
        sweeps += 1
        improved = False
        for alpha in rng.permutation(n_labels):
            new, e = expand_labels(idx, int(alpha), unary, pair)
            if e < energy:
                idx, energy = new, e
                moves += 1
                improved = True
        history.append(energy)
        if not improved:
            break
    return idx, energy, {"sweeps": sweeps, "moves": moves, "energy_per_sweep": history}


def _solve_one_side(L: np.ndarray, R: np.ndarray, params: StereoEnergyParams, seed: int):
    unary, border = unary_costs(L, R, params)
    pair = pairwise_table(params)
    idx, energy, stats = minimize_expansion(unary, pair, seed)
    outside = np.take_along_axis(border, idx[None], axis=0)[0]
    return idx + params.disparity_min, energy, outside, stats


def solve_disparity(left, right, params: StereoEnergyParams = StereoEnergyParams()) -> DisparityMap:
    """Left-referenced disparity map with a left-right consistency check."""
    L, R = _as_gray(left), _as_gray(right)
    if L.shape != R.shape:
        raise ValueError("left and right images must have the same size")
    lab, energy, outside, stats = _solve_one_side(L, R, params, params.seed)
    valid = ~outside
    if params.lr_check:
        # right-referenced map: mirror both images so the same solver applies
        lab_r, _, out_r, _ = _solve_one_side(R[:, ::-1], L[:, ::-1], params, params.seed)
        lab_r, out_r = lab_r[:, ::-1], out_r[:, ::-1]
        h, w = lab.shape
        xr = np.arange(w)[None, :] - lab
        inside = (xr >= 0) & (xr < w)
        back = np.take_along_axis(lab_r, np.clip(xr, 0, w - 1), axis=1)
        consistent = inside & (np.abs(lab - back) <= 1)
        stats["lr_rejected"] = int((valid & ~consistent).sum())
        valid &= consistent
    stats["valid_fraction"] = float(valid.mean())
    return DisparityMap(lab, valid, int(energy), params.disparity_min, params.disparity_max, stats)


# ---------------------------------------------------------------------------
# output


def write_disparity(dm: DisparityMap, stem: str | os.PathLike) -> dict[str, str]:
    """Write ``<stem>.pgm`` (label + 1, 0 = invalid), ``<stem>.pfm`` and ``<stem>.json``."""
    stem = os.fspath(stem)
    pgm = np.where(dm.valid, dm.labels - dm.disparity_min + 1, 0)
    write_pgm16(pgm, stem + ".pgm")
    pfm = np.where(dm.valid, dm.labels.astype(np.float64), np.nan)
    write_pfm(pfm, stem + ".pfm")
    meta = {
        "disparity_min": dm.disparity_min,
        "disparity_max": dm.disparity_max,
        "energy": dm.energy,
        "energy_scale": ENERGY_SCALE,
        "valid_fraction": float(dm.valid.mean()),
        **{k: v for k, v in dm.stats.items()},
    }
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return {"pgm": stem + ".pgm", "pfm": stem + ".pfm", "json": stem + ".json"}


def read_disparity(stem: str | os.PathLike) -> DisparityMap:
    from ..imgcore import read_pgm16

    stem = os.fspath(stem)
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    raw = read_pgm16(stem + ".pgm")
    valid = raw > 0
    labels = np.where(valid, raw - 1 + meta["disparity_min"], meta["disparity_min"])
    return DisparityMap(labels, valid, meta["energy"], meta["disparity_min"], meta["disparity_max"])
