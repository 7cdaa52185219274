"""The full enhancement chain applied to one colour frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..imgcore import (
    ColorSpace,
    RasterImage,
    crop_extension,
    rgb_to_ycbcr,
    symmetric_extend,
    ycbcr_to_rgb,
)
from .diffusion import DiffusionParams, anisotropic_diffuse
from .spectral import HomomorphicParams, MoireParams, homomorphic_filter, remove_moire
from .tone import IntensityAdjustParams, adjust_intensity, equalize_color_means
from .wavelet import WaveletDenoiseParams, wavelet_denoise


@dataclass(frozen=True)
class EnhanceParams:
    moire: MoireParams = field(default_factory=MoireParams)
    homomorphic: HomomorphicParams = field(default_factory=HomomorphicParams)
    wavelet: WaveletDenoiseParams = field(default_factory=WaveletDenoiseParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    intensity: IntensityAdjustParams = field(default_factory=IntensityAdjustParams)


def _per_channel(img: RasterImage, fn) -> RasterImage:
    planes = [fn(RasterImage.gray(img.channel(k))).plane for k in range(img.channels)]
    return RasterImage(np.stack(planes, axis=2), img.colorspace)


def preprocess(img: RasterImage, p: EnhanceParams = EnhanceParams()) -> RasterImage:
    """Moire removal, extension, luminance filtering, then colour balancing.

    Gray input is processed through the luminance steps only and returned gray.
    """
    img = _per_channel(img, lambda ch: remove_moire(ch, p.moire))
    ext, rec = symmetric_extend(img)
    if ext.colorspace is ColorSpace.GRAY:
        y = ext
    else:
        ycc = rgb_to_ycbcr(ext)
        y = RasterImage.gray(ycc.channel(0))

    # homomorphic needs non-negative input; moire removal may ring below zero
    y = RasterImage.gray(np.maximum(y.plane, 0.0))
    y = homomorphic_filter(y, p.homomorphic)
    # tiny inputs cannot host the configured number of levels
    levels = min(p.wavelet.levels, int(np.log2(y.width)))
    if levels >= 1:
        p_wav = WaveletDenoiseParams(levels, p.wavelet.neighborhood_half_width, p.wavelet.filter_bank)
        y = wavelet_denoise(y, p_wav)
    y = anisotropic_diffuse(y, p.diffusion)
    y = adjust_intensity(y, p.intensity)

    if ext.colorspace is ColorSpace.GRAY:
        return crop_extension(y, rec)
    data = ycc.data.copy()
    data[:, :, 0] = y.plane
    rgb = ycbcr_to_rgb(RasterImage(data, ColorSpace.YCBCR))
    rgb = crop_extension(rgb, rec)
    rgb = RasterImage.rgb(np.clip(rgb.data, 0.0, 1.0))
    return equalize_color_means(rgb)
