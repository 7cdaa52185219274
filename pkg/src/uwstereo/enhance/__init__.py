from .chain import EnhanceParams, preprocess
from .diffusion import DiffusionParams, anisotropic_diffuse, conductance
from .spectral import (
    HomomorphicParams,
    MoireParams,
    homomorphic_filter,
    homomorphic_transfer,
    low_frequency_energy_ratio,
    remove_moire,
)
from .tone import IntensityAdjustParams, adjust_intensity, equalize_color_means
from .wavelet import (
    FilterBank,
    WaveletDenoiseParams,
    WaveletPyramid,
    bivariate_shrink,
    dwt2,
    estimate_noise_sigma,
    idwt2,
    wavelet_denoise,
)

__all__ = [
    "DiffusionParams",
    "EnhanceParams",
    "FilterBank",
    "HomomorphicParams",
    "IntensityAdjustParams",
    "MoireParams",
    "WaveletDenoiseParams",
    "WaveletPyramid",
    "adjust_intensity",
    "anisotropic_diffuse",
    "bivariate_shrink",
    "conductance",
    "dwt2",
    "equalize_color_means",
    "estimate_noise_sigma",
    "homomorphic_filter",
    "homomorphic_transfer",
    "idwt2",
    "low_frequency_energy_ratio",
    "preprocess",
    "remove_moire",
    "wavelet_denoise",
]
