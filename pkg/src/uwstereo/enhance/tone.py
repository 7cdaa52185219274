from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imgcore import ColorSpace, ImageError, RasterImage


@dataclass(frozen=True)
class IntensityAdjustParams:
    low_clip_fraction: float = 0.01
    high_clip_fraction: float = 0.01

    def __post_init__(self):
        lo, hi = self.low_clip_fraction, self.high_clip_fraction
        if lo < 0 or hi < 0 or lo + hi >= 1:
            raise ValueError("clip fractions must be non-negative and sum to less than 1")


def adjust_intensity(img: RasterImage, p: IntensityAdjustParams = IntensityAdjustParams()) -> RasterImage:
    """Stretch [q_low, q_high] to [0, 1], saturating the clipped tails."""
    if img.channels != 1:
        raise ImageError("adjust_intensity expects a single-channel image")
    x = img.plane
    q_lo, q_hi = np.quantile(x, [p.low_clip_fraction, 1.0 - p.high_clip_fraction])
    if q_hi <= q_lo:
        return img
    out = np.clip((x - q_lo) / (q_hi - q_lo), 0.0, 1.0)
    return RasterImage(out, ColorSpace.GRAY)


def equalize_color_means(img: RasterImage) -> RasterImage:
    """Scale each RGB channel so that its mean matches the mean of the three means.

    A channel with zero mean is left as is. Results are clamped to [0, 1].
    """
    if img.colorspace is not ColorSpace.RGB:
        raise ImageError("equalize_color_means expects an RGB image")
    means = img.data.reshape(-1, 3).mean(axis=0)
    target = means.mean()
    scale = np.divide(target, means, out=np.ones(3), where=means > 0)
    out = np.clip(img.data * scale, 0.0, 1.0)
    return RasterImage(out, ColorSpace.RGB)
