from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imgcore import ColorSpace, ImageError, RasterImage


@dataclass(frozen=True)
class DiffusionParams:
    k_edge: float = 0.1
    lam: float = 0.2
    iterations: int = 5

    def __post_init__(self):
        if self.k_edge <= 0:
            raise ValueError("k_edge must be positive")
        if not 0 < self.lam <= 0.25:
            raise ValueError("lam must lie in (0, 0.25] for a stable explicit scheme")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def conductance(grad: np.ndarray, k_edge: float) -> np.ndarray:
    return np.exp(-((np.abs(grad) / k_edge) ** 2))


def _neighbor_differences(x: np.ndarray):
    # replicated border: the difference across the image edge is zero
    p = np.pad(x, 1, mode="edge")
    north = p[:-2, 1:-1] - x
    south = p[2:, 1:-1] - x
    east = p[1:-1, 2:] - x
    west = p[1:-1, :-2] - x
    return north, south, east, west


def anisotropic_diffuse(img: RasterImage, p: DiffusionParams = DiffusionParams()) -> RasterImage:
    """Perona-Malik diffusion with exponential conductance, Jacobi updates."""
    if img.channels != 1:
        raise ImageError("anisotropic_diffuse expects a single-channel image")
    x = img.plane.copy()
    for _ in range(p.iterations):
        flux = np.zeros_like(x)
        for d in _neighbor_differences(x):
            flux += conductance(d, p.k_edge) * d
        x = x + p.lam * flux
    return RasterImage(x, ColorSpace.GRAY)
