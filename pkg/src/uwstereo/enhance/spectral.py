"""Fourier-domain filters: moire peak removal and homomorphic correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..imgcore import ColorSpace, ImageError, RasterImage


@dataclass(frozen=True)
class MoireParams:
    peak_ratio_threshold: float = 10.0
    notch_radius: int = 2
    dc_guard_radius: int = 4

    def __post_init__(self):
        if self.peak_ratio_threshold <= 1:
            raise ValueError("peak_ratio_threshold must exceed 1")
        if self.notch_radius < 1 or self.dc_guard_radius < 1:
            raise ValueError("notch and dc guard radii must be >= 1")


@dataclass(frozen=True)
class HomomorphicParams:
    r_high: float = 2.5
    r_low: float = 0.5
    cutoff_sigma: float = 32.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if not self.r_high > self.r_low > 0:
            raise ValueError("need r_high > r_low > 0")
        if self.cutoff_sigma <= 0 or self.epsilon <= 0:
            raise ValueError("cutoff_sigma and epsilon must be positive")


def _require_gray(img: RasterImage, what: str) -> np.ndarray:
    if img.channels != 1:
        raise ImageError(f"{what} expects a single-channel image")
    return img.plane


def centered_frequency_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency bins with DC at the array centre (fftshift layout)."""
    wy = np.arange(height) - height // 2
    wx = np.arange(width) - width // 2
    return np.meshgrid(wx, wy)


def moire_peak_mask(spectrum: np.ndarray, p: MoireParams) -> tuple[np.ndarray, np.ndarray]:
    """Locate isolated spectral peaks.

    ``spectrum`` is an fftshift-ed complex spectrum. Returns the boolean peak
    mask and the local-median magnitude map used as the replacement level.
    """
    mag = np.abs(spectrum)
    size = 2 * p.notch_radius + 1
    local_med = ndimage.median_filter(mag, size=size, mode="wrap")
    h, w = mag.shape
    wx, wy = centered_frequency_grid(h, w)
    outside_dc = wx**2 + wy**2 > p.dc_guard_radius**2
    mask = outside_dc & (mag > p.peak_ratio_threshold * local_med)
    # keep conjugate bins paired so the inverse transform stays real
    conj = np.roll(mask[::-1, ::-1], (1 - h % 2, 1 - w % 2), axis=(0, 1))
    return mask | conj, local_med


def remove_moire(img: RasterImage, p: MoireParams = MoireParams()) -> RasterImage:
    x = _require_gray(img, "remove_moire")
    spec = np.fft.fftshift(np.fft.fft2(x))
    mask, local_med = moire_peak_mask(spec, p)
    if not mask.any():
        return img
    mag = np.abs(spec[mask])
    scale = np.divide(local_med[mask], mag, out=np.zeros_like(mag), where=mag > 0)
    spec[mask] *= scale
    out = np.fft.ifft2(np.fft.ifftshift(spec)).real
    return RasterImage(out, ColorSpace.GRAY)


def homomorphic_transfer(height: int, width: int, p: HomomorphicParams) -> np.ndarray:
    """High-emphasis Gaussian transfer function on centred frequency bins."""
    wx, wy = centered_frequency_grid(height, width)
    r2 = (wx.astype(np.float64) ** 2 + wy.astype(np.float64) ** 2) / (2.0 * p.cutoff_sigma**2)
    return (p.r_high - p.r_low) * (1.0 - np.exp(-r2)) + p.r_low


def homomorphic_filter(img: RasterImage, p: HomomorphicParams = HomomorphicParams()) -> RasterImage:
    """Attenuate slowly varying illumination in the log domain.

    The image is modelled as illumination times reflectance; the log turns
    that product into a sum, the transfer function scales low frequencies by
    ``r_low`` and high frequencies by ``r_high``, and ``exp`` maps back.
    """
    f = _require_gray(img, "homomorphic_filter")
    if np.any(f < 0):
        raise ImageError("homomorphic_filter needs non-negative samples")
    g = np.log(np.maximum(f, p.epsilon))
    G = np.fft.fftshift(np.fft.fft2(g))
    S = homomorphic_transfer(*g.shape, p) * G
    s = np.fft.ifft2(np.fft.ifftshift(S)).real
    # guard exp overflow on adversarial input; valid images stay far from this
    out = np.exp(np.clip(s, -700.0, 700.0))
    return RasterImage(out, ColorSpace.GRAY)


def low_frequency_energy_ratio(x: np.ndarray, radius: float) -> float:
    """Share of non-DC spectral energy lying within ``radius`` bins of DC."""
    x = np.asarray(x, dtype=np.float64)
    power = np.abs(np.fft.fftshift(np.fft.fft2(x - x.mean()))) ** 2
    wx, wy = centered_frequency_grid(*x.shape)
    r2 = wx**2 + wy**2
    total = power[r2 > 0].sum()
    if total == 0:
        return 0.0
    return float(power[(r2 > 0) & (r2 <= radius**2)].sum() / total)
