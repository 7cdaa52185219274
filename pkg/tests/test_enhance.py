import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwstereo.enhance import (
    DiffusionParams,
    EnhanceParams,
    FilterBank,
    HomomorphicParams,
    IntensityAdjustParams,
    MoireParams,
    WaveletDenoiseParams,
    adjust_intensity,
    anisotropic_diffuse,
    bivariate_shrink,
    dwt2,
    equalize_color_means,
    estimate_noise_sigma,
    homomorphic_filter,
    homomorphic_transfer,
    idwt2,
    low_frequency_energy_ratio,
    preprocess,
    remove_moire,
    wavelet_denoise,
)
from uwstereo.imgcore import ImageError, RasterImage
from uwstereo.synth import degrade_scene, textured_rgb


def gray(a):
    return RasterImage.gray(np.asarray(a, dtype=np.float64))


def texture(n, seed=0, cell=6.0):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    return textured_rgb(x, y, seed, cell, 1.0)


ADVERSARIAL = {
    "zeros": np.zeros((16, 16)),
    "ones": np.ones((16, 16)),
    "hot": np.pad(np.ones((1, 1)), ((7, 8), (7, 8))),
}


# ---------------------------------------------------------------------------
# parameter invariants


def test_param_validation():
    with pytest.raises(ValueError):
        HomomorphicParams(r_high=0.4, r_low=0.5)
    with pytest.raises(ValueError):
        HomomorphicParams(cutoff_sigma=0)
    with pytest.raises(ValueError):
        DiffusionParams(lam=0.3)
    with pytest.raises(ValueError):
        DiffusionParams(iterations=0)
    with pytest.raises(ValueError):
        MoireParams(peak_ratio_threshold=1.0)
    with pytest.raises(ValueError):
        IntensityAdjustParams(0.5, 0.5)
    with pytest.raises(ValueError):
        WaveletDenoiseParams(levels=0)
    with pytest.raises(ValueError):
        FilterBank.named("nope")


# ---------------------------------------------------------------------------
# moire


def test_moire_constant_unchanged():
    img = gray(np.full((32, 32), 0.4))
    assert np.array_equal(remove_moire(img).plane, img.plane)


def test_moire_removes_injected_sinusoid():
    n = 128
    g = texture(n).mean(axis=2)
    x = np.arange(n)[None, :] * np.ones((n, 1))
    basis = np.sin(2 * np.pi * x / 4)
    out = remove_moire(gray(g + 0.2 * basis)).plane
    residual = ((out - g) * basis).sum() / (basis * basis).sum()
    assert abs(residual) < 0.1 * 0.2


def test_moire_inert_on_white_noise():
    a = np.random.default_rng(0).random((128, 128))
    out = remove_moire(gray(a)).plane
    mse = np.mean((out - a) ** 2)
    assert mse == 0 or 10 * np.log10(1.0 / mse) > 20


def test_moire_rejects_rgb():
    with pytest.raises(ImageError):
        remove_moire(RasterImage.rgb(np.zeros((4, 4, 3))))


# ---------------------------------------------------------------------------
# homomorphic


def test_transfer_dc_and_high_limit():
    p = HomomorphicParams(r_high=2.5, r_low=0.5, cutoff_sigma=8)
    H = homomorphic_transfer(128, 128, p)
    assert H[64, 64] == 0.5
    # Nyquist corner, cutoff far below Nyquist
    assert abs(H[0, 0] - 2.5) < 1e-3


def test_homomorphic_reduces_illumination_energy():
    n = 512
    g = texture(n).mean(axis=2)
    ramp = np.linspace(0.3, 1.0, n)[None, :]
    f = (0.2 + 0.8 * g) * ramp
    p = HomomorphicParams()
    out = homomorphic_filter(gray(f), p).plane
    before = low_frequency_energy_ratio(f, p.cutoff_sigma)
    after = low_frequency_energy_ratio(out, p.cutoff_sigma)
    assert before / after >= 2.0


def test_homomorphic_monotone_in_r_high():
    n = 64
    f = 0.2 + 0.8 * texture(n).mean(axis=2)
    p0 = HomomorphicParams()
    energies = []
    for rh in (1.5, 2.5, 3.5):
        out = homomorphic_filter(gray(f), HomomorphicParams(r_high=rh)).plane
        power = np.abs(np.fft.fftshift(np.fft.fft2(out))) ** 2
        wy, wx = np.mgrid[0:n, 0:n] - n // 2
        energies.append(power[wx**2 + wy**2 > p0.cutoff_sigma**2].sum())
    assert energies[0] <= energies[1] <= energies[2]


def test_homomorphic_negative_input():
    with pytest.raises(ImageError):
        homomorphic_filter(gray([[-0.1, 0.2]]))


# ---------------------------------------------------------------------------
# wavelets


@pytest.mark.parametrize("bank", ["farras", "haar"])
def test_perfect_reconstruction_and_parseval(bank):
    a = np.random.default_rng(1).random((64, 64))
    p = WaveletDenoiseParams(levels=3, filter_bank=bank)
    pyr = dwt2(gray(a), p)
    assert np.abs(idwt2(pyr).plane - a).max() <= 1e-8
    energy = (pyr.lowpass**2).sum() + sum((b**2).sum() for bands in pyr.details for b in bands)
    assert abs(energy - (a**2).sum()) / (a**2).sum() <= 1e-6


def test_constant_has_no_detail():
    pyr = dwt2(gray(np.full((32, 32), 0.7)), WaveletDenoiseParams(levels=3))
    for bands in pyr.details:
        for b in bands:
            assert np.abs(b).max() <= 1e-10


def test_farras_bank_is_orthogonal():
    bank = FilterBank.named("farras")
    assert abs(np.sum(bank.lowpass**2) - 1) < 1e-12
    assert abs(np.sum(bank.lowpass) - np.sqrt(2)) < 1e-10


def test_side_must_divide():
    with pytest.raises(ValueError):
        dwt2(gray(np.zeros((12, 12))), WaveletDenoiseParams(levels=3))


def test_noise_sigma_estimate():
    noise = np.random.default_rng(2).normal(0, 0.1, (256, 256))
    s = estimate_noise_sigma(dwt2(gray(noise), WaveletDenoiseParams()))
    assert 0.08 <= s <= 0.12


def test_denoise_constant_unchanged():
    a = np.full((32, 32), 0.3)
    assert np.abs(wavelet_denoise(gray(a)).plane - a).max() <= 1e-6


def test_denoise_helps():
    clean = texture(128, seed=3).mean(axis=2)
    noisy = clean + np.random.default_rng(3).normal(0, 0.05, clean.shape)
    out = wavelet_denoise(gray(noisy)).plane
    assert np.mean((out - clean) ** 2) < np.mean((noisy - clean) ** 2)


def test_bivariate_zero_sigma_kills_coefficient():
    child = np.zeros((8, 8))
    child[3, 3] = 0.01
    out = bivariate_shrink(child, np.zeros_like(child), sigma_n=1.0, half_width=1)
    # local signal deviation is 0 in every window
    assert np.all(out == 0)


def test_bivariate_without_parent_is_soft_threshold():
    rng = np.random.default_rng(4)
    child = rng.normal(0, 1, (16, 16))
    sigma_n = 0.5
    out = bivariate_shrink(child, np.zeros_like(child), sigma_n, 2)
    from scipy import ndimage

    sigma = np.sqrt(np.maximum(ndimage.uniform_filter(child**2, 5, mode="wrap") - sigma_n**2, 0))
    t = np.sqrt(3) * sigma_n**2 / sigma
    soft = np.sign(child) * np.maximum(np.abs(child) - t, 0)
    np.testing.assert_allclose(out, soft, atol=1e-12)


# ---------------------------------------------------------------------------
# diffusion


def test_diffusion_constant_fixed_point():
    a = np.full((20, 20), 0.42)
    assert np.array_equal(anisotropic_diffuse(gray(a), DiffusionParams(iterations=7)).plane, a)


def test_diffusion_preserves_mean():
    a = np.random.default_rng(5).random((40, 30))
    out = anisotropic_diffuse(gray(a), DiffusionParams(k_edge=0.3, iterations=10)).plane
    assert abs(out.mean() - a.mean()) <= 1e-6


def test_diffusion_step_edge():
    n = 128
    x = np.arange(n)[None, :] * np.ones((n, 1))
    edge = np.where(x < n // 2, 0.1, 0.9)
    noisy = edge + np.random.default_rng(6).normal(0, 0.02, edge.shape)
    out = anisotropic_diffuse(gray(noisy), DiffusionParams(k_edge=0.1, lam=0.2, iterations=5)).plane
    flat = (x > 10) & (x < n // 2 - 10)
    assert np.var(noisy[flat]) / np.var(out[flat]) >= 4
    height = out[:, n // 2 + 1 : n // 2 + 8].mean() - out[:, n // 2 - 8 : n // 2 - 1].mean()
    assert abs(height - 0.8) <= 0.08


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0), st.floats(0.01, 0.25))
def test_diffusion_maximum_principle(seed, k, lam):
    a = np.random.default_rng(seed).random((12, 9))
    out = anisotropic_diffuse(gray(a), DiffusionParams(k_edge=k, lam=lam, iterations=4)).plane
    assert out.min() >= a.min() - 1e-9 and out.max() <= a.max() + 1e-9


# ---------------------------------------------------------------------------
# tone


def test_adjust_identity_on_full_range():
    a = np.linspace(0, 1, 101).reshape(1, -1)
    out = adjust_intensity(gray(a), IntensityAdjustParams(0.0, 0.0)).plane
    np.testing.assert_allclose(out, a, atol=1e-12)


def test_adjust_midpoint():
    a = np.array([[0.25, 0.5, 0.75]])
    out = adjust_intensity(gray(a), IntensityAdjustParams(0.0, 0.0)).plane
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-12)


def test_adjust_ramp_saturation():
    a = np.linspace(0, 1, 10001).reshape(1, -1)
    out = adjust_intensity(gray(a), IntensityAdjustParams(0.01, 0.01)).plane
    saturated = np.mean((out == 0) | (out == 1))
    assert abs(saturated - 0.02) < 0.001


def test_adjust_constant_unchanged():
    a = np.full((5, 5), 0.3)
    assert np.array_equal(adjust_intensity(gray(a)).plane, a)


def test_equalize_examples():
    bal = np.random.default_rng(7).random((8, 8, 1)) * np.ones(3) * 0.8
    np.testing.assert_allclose(equalize_color_means(RasterImage.rgb(bal)).data, bal, atol=1e-6)
    cast = np.ones((4, 4, 3)) * np.array([0.2, 0.3, 0.4])
    out = equalize_color_means(RasterImage.rgb(cast)).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), [0.3, 0.3, 0.3], atol=1e-12)
    black = np.zeros((4, 4, 3))
    assert np.array_equal(equalize_color_means(RasterImage.rgb(black)).data, black)


def test_equalize_idempotent():
    a = 0.2 + 0.5 * np.random.default_rng(8).random((16, 16, 3)) * np.array([0.6, 0.8, 1.0])
    once = equalize_color_means(RasterImage.rgb(a))
    twice = equalize_color_means(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)


# ---------------------------------------------------------------------------
# finite outputs on adversarial inputs


@pytest.mark.parametrize("name", sorted(ADVERSARIAL))
def test_filters_stay_finite(name):
    img = gray(ADVERSARIAL[name])
    outs = [
        remove_moire(img),
        homomorphic_filter(img),
        wavelet_denoise(img),
        anisotropic_diffuse(img),
        adjust_intensity(img),
        preprocess(RasterImage.rgb(np.repeat(ADVERSARIAL[name][..., None], 3, axis=2))),
    ]
    for o in outs:
        assert np.all(np.isfinite(o.data))


# ---------------------------------------------------------------------------
# the whole chain


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_preprocess_preserves_dimensions(w, h):
    a = np.random.default_rng(w * 100 + h).random((h, w, 3))
    out = preprocess(RasterImage.rgb(a))
    assert (out.width, out.height, out.channels) == (w, h, 3)


def test_preprocess_gray_stays_gray():
    out = preprocess(gray(np.random.default_rng(9).random((20, 24))))
    assert out.channels == 1 and out.width == 24


def test_preprocess_deterministic():
    img = RasterImage.rgb(texture(64))
    assert preprocess(img).data.tobytes() == preprocess(img).data.tobytes()


def test_preprocess_degraded_scene():
    n = 512
    clean = RasterImage.rgb(texture(n))
    deg = degrade_scene(clean, (0.3, 1.0), 0.02, (0.6, 0.8, 1.0), seed=1)
    deg = RasterImage.rgb(np.clip(deg.data, 0, 1))
    out = preprocess(deg, EnhanceParams())
    means = out.data.mean(axis=(0, 1))
    assert means.max() - means.min() <= 0.05
    r = HomomorphicParams().cutoff_sigma
    before = low_frequency_energy_ratio(deg.data.mean(axis=2), r)
    after = low_frequency_energy_ratio(out.data.mean(axis=2), r)
    assert before / after >= 2.0


@pytest.mark.xfail(
    strict=True,
    reason="r_H = 2.5 multiplies high-frequency log contrast 2.5x; the chain is a contrast "
    "enhancer and measures ~0.15 RMS change on a clean standard image",
)
def test_preprocess_near_inert_on_clean_image():
    from skimage import data

    a = data.chelsea() / 255.0
    out = preprocess(RasterImage.rgb(a)).data
    assert np.sqrt(np.mean((out - a) ** 2)) < 0.1
