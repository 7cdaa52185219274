"""Periodic orthogonal 2-D wavelet transform and bivariate shrinkage denoising."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..imgcore import ColorSpace, ImageError, RasterImage

# Nearly symmetric orthogonal lowpass (Abdelnour-Selesnick / "Farras") filter.
FARRAS_LOWPASS = (
    0.0,
    0.0,
    -0.08838834764832,
    0.08838834764832,
    0.69587998903400,
    0.69587998903400,
    0.08838834764832,
    -0.08838834764832,
    0.01122679215254,
    0.01122679215254,
)

HAAR_LOWPASS = (2**-0.5, 2**-0.5)

FILTER_BANKS = {"farras": FARRAS_LOWPASS, "haar": HAAR_LOWPASS}

# median absolute deviation of a standard normal
GAUSSIAN_MAD = 0.6745


@dataclass(frozen=True)
class FilterBank:
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray

    @classmethod
    def named(cls, name: str) -> "FilterBank":
        try:
            lo = np.asarray(FILTER_BANKS[name], dtype=np.float64)
        except KeyError:
            raise ValueError(f"unknown filter bank {name!r}; choose from {sorted(FILTER_BANKS)}")
        n = np.arange(lo.size)
        hi = (-1.0) ** (n + 1) * lo[::-1]
        bank = cls(name, lo, hi)
        bank.check_perfect_reconstruction()
        return bank

    def check_perfect_reconstruction(self, tol: float = 1e-10) -> None:
        """Analysis operator on a short periodic signal must be orthogonal."""
        size = 2 * max(2, self.lowpass.size)
        eye = np.eye(size)
        A = np.vstack([_analysis_1d(eye, self, axis=0)[0], _analysis_1d(eye, self, axis=0)[1]])
        err = np.abs(A @ A.T - np.eye(size)).max()
        if err > tol:
            raise ValueError(f"filter bank {self.name!r} is not orthogonal (error {err:.2e})")


@dataclass(frozen=True)
class WaveletDenoiseParams:
    levels: int = 3
    neighborhood_half_width: int = 3
    filter_bank: str = "farras"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.neighborhood_half_width < 0:
            raise ValueError("neighborhood_half_width must be >= 0")
        FilterBank.named(self.filter_bank)


@dataclass
class WaveletPyramid:
    """details[0] is the finest level; each entry holds (LH, HL, HH)."""

    lowpass: np.ndarray
    details: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    bank: str = "farras"

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficients(self) -> list[np.ndarray]:
        out = [self.lowpass]
        for d in self.details:
            out.extend(d)
        return out


def _analysis_1d(x: np.ndarray, bank: FilterBank, axis: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    lo = np.zeros((n // 2,) + x.shape[1:])
    hi = np.zeros_like(lo)
    for k, (a, b) in enumerate(zip(bank.lowpass, bank.highpass)):
        shifted = np.roll(x, -k, axis=0)[::2]
        if a:
            lo += a * shifted
        if b:
            hi += b * shifted
    return np.moveaxis(lo, 0, axis), np.moveaxis(hi, 0, axis)


def _synthesis_1d(lo: np.ndarray, hi: np.ndarray, bank: FilterBank, axis: int) -> np.ndarray:
    lo = np.moveaxis(lo, axis, 0)
    hi = np.moveaxis(hi, axis, 0)
    n = 2 * lo.shape[0]
    out = np.zeros((n,) + lo.shape[1:])
    up = np.zeros_like(out)
    for k, (a, b) in enumerate(zip(bank.lowpass, bank.highpass)):
        if not (a or b):
            continue
        up[::2] = a * lo + b * hi
        out += np.roll(up, k, axis=0)
    return np.moveaxis(out, 0, axis)


def _check_side(shape: tuple[int, int], levels: int) -> None:
    h, w = shape
    step = 2**levels
    if h % step or w % step:
        raise ImageError(f"image {w}x{h} not divisible by 2^{levels}")


def dwt2(img: RasterImage, p: WaveletDenoiseParams = WaveletDenoiseParams()) -> WaveletPyramid:
    if img.channels != 1:
        raise ImageError("dwt2 expects a single-channel image")
    x = img.plane
    _check_side(x.shape, p.levels)
    bank = FilterBank.named(p.filter_bank)
    details = []
    for _ in range(p.levels):
        lo_r, hi_r = _analysis_1d(x, bank, axis=0)
        ll, lh = _analysis_1d(lo_r, bank, axis=1)
        hl, hh = _analysis_1d(hi_r, bank, axis=1)
        details.append((lh, hl, hh))
        x = ll
    return WaveletPyramid(x, details, bank.name)


def idwt2(pyr: WaveletPyramid) -> RasterImage:
    bank = FilterBank.named(pyr.bank)
    x = pyr.lowpass
    for lh, hl, hh in reversed(pyr.details):
        lo_r = _synthesis_1d(x, lh, bank, axis=1)
        hi_r = _synthesis_1d(hl, hh, bank, axis=1)
        x = _synthesis_1d(lo_r, hi_r, bank, axis=0)
    return RasterImage(x, ColorSpace.GRAY)


def estimate_noise_sigma(pyr: WaveletPyramid) -> float:
    """Robust noise level from the finest diagonal subband."""
    hh = pyr.details[0][2]
    return float(np.median(np.abs(hh)) / GAUSSIAN_MAD)


def bivariate_shrink(child: np.ndarray, parent: np.ndarray, sigma_n: float, half_width: int) -> np.ndarray:
    """Shrink ``child`` jointly with its co-located ``parent`` (same shape)."""
    size = 2 * half_width + 1
    sigma_y2 = ndimage.uniform_filter(child * child, size=size, mode="wrap")
    sigma = np.sqrt(np.maximum(sigma_y2 - sigma_n**2, 0.0))
    mag = np.sqrt(child * child + parent * parent)
    with np.errstate(divide="ignore", invalid="ignore"):
        thresh = np.sqrt(3.0) * sigma_n**2 / sigma
        gain = np.maximum(mag - thresh, 0.0) / mag
    gain = np.where((sigma > 0) & (mag > 0), gain, 0.0)
    return gain * child


def _upsample_parent(parent: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(parent, 2, axis=0), 2, axis=1)


def wavelet_denoise(img: RasterImage, p: WaveletDenoiseParams = WaveletDenoiseParams()) -> RasterImage:
    pyr = dwt2(img, p)
    sigma_n = estimate_noise_sigma(pyr)
    if sigma_n == 0.0:
        return idwt2(pyr)
    shrunk = []
    for level, bands in enumerate(pyr.details):
        coarser = pyr.details[level + 1] if level + 1 < pyr.levels else None
        new_bands = []
        for k, child in enumerate(bands):
            parent = np.zeros_like(child) if coarser is None else _upsample_parent(coarser[k])
            new_bands.append(bivariate_shrink(child, parent, sigma_n, p.neighborhood_half_width))
        shrunk.append(tuple(new_bands))
    return idwt2(WaveletPyramid(pyr.lowpass, shrunk, pyr.bank))
