import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwstereo.imgcore import RasterImage
from uwstereo.rectify import (
    LMDivergence,
    RectificationError,
    RectificationModel,
    apply_homography,
    build_F,
    estimate_rectification,
    focal_from_alpha_prime,
    levenberg_marquardt,
    model_from_params,
    rotation_xyz,
    sampson_error,
    sampson_residuals,
    skew_u1,
    vertical_disparity_rms,
    warp_image,
    warp_pair,
)
from uwstereo.synth import SceneKind, SyntheticScene, sample_relief_points

W = H = 768


@pytest.fixture(scope="module")
def rotated_points():
    s = SyntheticScene(SceneKind.ROTATED_CAMERA_PAIR, focal_length=520, rotation_deg=5.0)
    P, cam_l, cam_r = sample_relief_points(s, W, H, 60, seed=0)
    return cam_l.project(P), cam_r.project(P)


def test_skew_u1_entries():
    A = skew_u1()
    np.testing.assert_array_equal(A, [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    np.testing.assert_array_equal(A @ [0, 1, 0], [0, 0, 1])
    np.testing.assert_array_equal(A @ [1, 0, 0], [0, 0, 0])
    np.testing.assert_array_equal(A + A.T, np.zeros((3, 3)))


def test_sampson_hand_value():
    F = skew_u1()
    assert sampson_error(((0, 0, 1), (0, 1, 1)), F) == 0.5
    # numerator check: m_r^T F m_l == -1
    assert np.array([0, 1, 1]) @ F @ np.array([0, 0, 1]) == -1


def test_sampson_on_line_is_zero():
    assert sampson_error(((3.0, 7.0, 1), (11.0, 7.0, 1)), skew_u1()) == 0.0


def test_sampson_degenerate_denominator():
    F = np.zeros((3, 3))
    F[2, 2] = 1.0
    # zero over zero is defined as zero; nonzero over zero is an error
    with pytest.raises(RectificationError):
        sampson_error(((1, 1, 1), (1, 1, 1)), F)
    G = np.zeros((3, 3))
    assert sampson_error(((1, 1, 1), (1, 1, 1)), G) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100))
def test_sampson_scale_invariant(seed, k):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(3, 3))
    a, b = rng.uniform(0, 500, (10, 2)), rng.uniform(0, 500, (10, 2))
    np.testing.assert_allclose(sampson_residuals(a, b, k * F) ** 2, sampson_residuals(a, b, F) ** 2, rtol=1e-9)


def test_build_F_zero_params():
    w, h = 320, 240
    F = build_F(np.zeros(6), w, h)
    K = np.array([[w + h, 0, w / 2], [0, w + h, h / 2], [0, 0, 1.0]])
    Kinv = np.linalg.inv(K)
    np.testing.assert_allclose(F, Kinv.T @ skew_u1() @ Kinv, atol=1e-15)
    rng = np.random.default_rng(0)
    y = rng.uniform(0, h, 30)
    ml = np.c_[rng.uniform(0, w, 30), y, np.ones(30)]
    mr = np.c_[rng.uniform(0, w, 30), y, np.ones(30)]
    assert np.abs(np.einsum("ni,ij,nj->n", mr, F, ml)).max() < 1e-15
    assert focal_from_alpha_prime(0.0, w, h) == w + h


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_common_x_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 0.5, 6)
    R_l, R_r = rotation_xyz(0, a[0], a[1]), rotation_xyz(a[2], a[3], a[4])
    Rx = rotation_xyz(rng.uniform(-np.pi, np.pi), 0, 0)
    lhs = R_r.T @ skew_u1() @ R_l
    rhs = (Rx @ R_r).T @ skew_u1() @ (Rx @ R_l)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_build_F_rank_two(seed):
    rng = np.random.default_rng(seed)
    p = np.r_[rng.uniform(-0.5, 0.5, 5), rng.uniform(-1, 1)]
    F = build_F(p, 640, 480)
    assert abs(np.linalg.det(F / np.linalg.norm(F))) < 1e-9


def test_lm_rosenbrock():
    res = levenberg_marquardt(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0])
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-6)
    assert res.converged


def test_lm_linear_least_squares():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(20, 3))
    b = rng.normal(size=20)
    res = levenberg_marquardt(lambda x: A @ x - b, np.zeros(3))
    np.testing.assert_allclose(res.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-6)


def test_lm_nonfinite_start():
    with pytest.raises(LMDivergence):
        levenberg_marquardt(lambda x: np.array([np.inf]), [0.0])


def test_rotated_pair_rectifies(rotated_points):
    ml, mr = rotated_points
    before = vertical_disparity_rms(ml, mr)
    model = estimate_rectification(ml, mr, W, H)
    after = vertical_disparity_rms(ml, mr, model)
    assert before > 5
    assert after < 0.3
    assert abs(model.alpha_prime) <= 1


def test_noisy_points(rotated_points):
    ml, mr = rotated_points
    sigma = 0.5
    rng = np.random.default_rng(7)
    model = estimate_rectification(ml + rng.normal(0, sigma, ml.shape), mr + rng.normal(0, sigma, mr.shape), W, H)
    assert vertical_disparity_rms(ml, mr, model) <= 1.5 * sigma


def test_already_rectified_stays_at_zero():
    rng = np.random.default_rng(2)
    ml = rng.uniform(20, 300, (40, 2))
    mr = ml - np.c_[rng.uniform(2, 20, 40), np.zeros(40)]
    model = estimate_rectification(ml, mr, 320, 320)
    assert model.residual_rms < 1e-3
    assert np.abs(model.angles).max() < 1e-3


def test_model_invariants(rotated_points):
    ml, mr = rotated_points
    model = estimate_rectification(ml, mr, W, H)
    assert abs(np.linalg.det(model.H_left)) > 0 and abs(np.linalg.det(model.H_right)) > 0
    np.testing.assert_array_equal(model.K_new_left[1:], model.K_new_right[1:])
    assert model.angles.shape == (5,)
    # rectified pairs share rows up to the residual
    yl = apply_homography(model.H_left, ml)[:, 1]
    yr = apply_homography(model.H_right, mr)[:, 1]
    assert np.sqrt(np.mean((yl - yr) ** 2)) < 0.3


def test_estimation_deterministic(rotated_points):
    ml, mr = rotated_points
    a = estimate_rectification(ml, mr, W, H, seed=4)
    b = estimate_rectification(ml, mr, W, H, seed=4)
    np.testing.assert_array_equal(a.H_left, b.H_left)
    np.testing.assert_array_equal(a.H_right, b.H_right)


def test_too_few_points():
    with pytest.raises(RectificationError):
        estimate_rectification(np.zeros((5, 2)), np.zeros((5, 2)), 64, 64)


def test_model_json_roundtrip(tmp_path, rotated_points):
    ml, mr = rotated_points
    model = estimate_rectification(ml, mr, W, H)
    model.save(tmp_path / "m.json")
    back = RectificationModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.H_left, model.H_left)
    np.testing.assert_array_equal(back.angles, model.angles)
    np.testing.assert_allclose(back.K_new_left, model.K_new_left, atol=1e-9)
    assert back.residual_rms == model.residual_rms


def test_identity_warp_bit_equal():
    img = RasterImage.rgb(np.random.default_rng(3).random((40, 50, 3)))
    out = warp_pair(img, img, RectificationModel.identity(50, 40))
    np.testing.assert_array_equal(out.left.data, img.data)
    np.testing.assert_array_equal(out.right.data, img.data)
    assert out.valid_left == (0, 50, 0, 40)


def test_translation_warp():
    a = np.random.default_rng(4).random((30, 30))
    T = np.array([[1.0, 0, 3], [0, 1, -2], [0, 0, 1]])
    out, mask = warp_image(RasterImage.gray(a), T)
    # output(x, y) == input(x - 3, y + 2)
    np.testing.assert_allclose(out.plane[0:25, 5:28], a[2:27, 2:25], atol=1e-6)
    assert not mask[:, :3].any() and not mask[-2:].any()


def test_warp_rejects_singular():
    with pytest.raises(RectificationError):
        warp_image(RasterImage.gray(np.zeros((4, 4))), np.zeros((3, 3)))


def test_warped_feature_matches_analytic_mapping():
    # a single bright blob, warped by a rotation model, lands where H sends its centre
    n = 96
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    cx, cy = 40.3, 52.7
    blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 2.0**2))
    model = model_from_params([0.02, 0.03, 0.01, -0.02, 0.02, 0.0], n, n)
    out, _ = warp_image(RasterImage.gray(blob), model.H_left)
    w = out.plane
    found = np.array([(w * xx).sum() / w.sum(), (w * yy).sum() / w.sum()])
    expected = apply_homography(model.H_left, [(cx, cy)])[0]
    assert np.hypot(*(found - expected)) < 0.5


def test_vertical_disparity_decreases_on_scenes(rotated_points):
    ml, mr = rotated_points
    for seed in range(3):
        rng = np.random.default_rng(seed)
        a = ml + rng.normal(0, 0.3, ml.shape)
        b = mr + rng.normal(0, 0.3, mr.shape)
        model = estimate_rectification(a, b, W, H, seed=seed)
        assert vertical_disparity_rms(a, b, model) <= vertical_disparity_rms(a, b)
