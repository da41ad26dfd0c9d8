import json
import math

import numpy as np
import pytest
from scipy import ndimage

from ct2ctpa.features import TinyConvExtractor, get_extractor
from ct2ctpa.ingest import export_png, hu_window
from ct2ctpa.metrics import (
    AlignmentTransform,
    EvalConfig,
    FeatureStats,
    ImagePair,
    SsimConstants,
    align_for_metrics,
    compute_feature_stats,
    evaluate_run,
    fid,
    lpips,
    mae,
    mse,
    ncc,
    psnr,
    ssim,
    _rescale_about_center,
    evaluate_run as _evaluate_run,
)
from ct2ctpa.phantom import PhantomSpec, generate_study

from oracles import frechet_equal_cov, pearson, ssim_brute_force


@pytest.fixture(scope="module")
def extractor():
    return TinyConvExtractor()


def const_pair(a, b, shape=(16, 16)):
    return ImagePair(np.full(shape, a, dtype=np.uint8), np.full(shape, b, dtype=np.uint8))


# ---------------------------------------------------------------------------
# MSE / PSNR / MAE


def test_mse_analytic_cases():
    assert mse(const_pair(7, 7)) == 0.0
    assert mse(const_pair(0, 255)) == 65025.0
    assert mse(const_pair(100, 116)) == 256.0


def test_psnr_analytic_cases():
    assert psnr(const_pair(42, 42)) == math.inf
    assert psnr(const_pair(0, 255)) == pytest.approx(0.0, abs=1e-12)
    assert psnr(const_pair(100, 116)) == pytest.approx(24.0484, abs=1e-3)


def test_psnr_strictly_decreasing_in_uniform_difference():
    values = [psnr(const_pair(0, d)) for d in (1, 2, 4, 8, 16, 32)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_mae_analytic_cases():
    assert mae(const_pair(9, 9)) == 0.0
    assert mae(const_pair(0, 255)) == 255.0
    half = np.zeros((10, 10), dtype=np.uint8)
    candidate = half.copy()
    candidate[:5] = 10  # half the pixels differ by 10
    assert mae(ImagePair(half, candidate)) == 5.0


def test_pixel_metrics_symmetric():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    b = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    assert mse(ImagePair(a, b)) == mse(ImagePair(b, a))
    assert mae(ImagePair(a, b)) == mae(ImagePair(b, a))
    assert psnr(ImagePair(a, b)) == psnr(ImagePair(b, a))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        ImagePair(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))


def test_out_of_range_rejected():
    with pytest.raises(ValueError, match="candidate"):
        ImagePair(np.zeros((2, 2)), np.full((2, 2), 300))


# ---------------------------------------------------------------------------
# SSIM


def test_ssim_identical_images_is_one():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    assert ssim(ImagePair(img, img)) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_closed_form():
    # variance-free pair: c = s = 1, l = (2*100*200 + C1) / (100^2 + 200^2 + C1)
    expected = (2 * 100 * 200 + 6.5025) / (100**2 + 200**2 + 6.5025)
    assert ssim(const_pair(100, 200)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.80003, abs=1e-5)


def test_ssim_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.integers(0, 256, (16, 16)).astype(np.uint8)
        b = np.clip(a + rng.integers(-30, 31, (16, 16)), 0, 255).astype(np.uint8)
        fast = ssim(ImagePair(a, b))
        slow = ssim_brute_force(a, b)
        assert fast == pytest.approx(slow, abs=1e-10)


def test_ssim_symmetric():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    b = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    assert ssim(ImagePair(a, b)) == pytest.approx(ssim(ImagePair(b, a)), abs=1e-12)


def test_ssim_window_larger_than_image_rejected():
    with pytest.raises(ValueError, match="window"):
        ssim(const_pair(0, 0, shape=(8, 8)))


def test_ssim_constants_validation():
    with pytest.raises(ValueError):
        SsimConstants(C1=-1.0)
    consts = SsimConstants(L=2.0)
    assert consts.C1 == pytest.approx((0.01 * 2) ** 2)
    assert consts.C3 == pytest.approx(consts.C2 / 2)


# ---------------------------------------------------------------------------
# feature stats and FID


def test_feature_stats_duplicated_images_zero_covariance(extractor):
    img = np.random.default_rng(4).random((32, 32)).astype(np.float32) * 2 - 1
    stats = compute_feature_stats([img] * 5, extractor)
    assert np.abs(stats.sigma).max() < 1e-12


def test_feature_stats_order_invariant(extractor):
    rng = np.random.default_rng(5)
    imgs = [rng.random((32, 32)).astype(np.float32) * 2 - 1 for _ in range(6)]
    s1 = compute_feature_stats(imgs, extractor)
    s2 = compute_feature_stats(imgs[::-1], extractor)
    np.testing.assert_allclose(s1.mu, s2.mu, atol=1e-12)
    np.testing.assert_allclose(s1.sigma, s2.sigma, atol=1e-12)


def test_feature_stats_mean_matches_recompute(extractor):
    rng = np.random.default_rng(6)
    imgs = [rng.random((32, 32)).astype(np.float32) * 2 - 1 for _ in range(5)]
    stats = compute_feature_stats(imgs, extractor)
    embeddings = extractor.embed(imgs)
    np.testing.assert_allclose(stats.mu, embeddings.mean(axis=0), atol=1e-10)


def test_feature_stats_requires_two_images(extractor):
    img = np.zeros((32, 32), dtype=np.float32)
    with pytest.raises(ValueError, match="2"):
        compute_feature_stats([img], extractor)


def test_fid_identical_stats_zero():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (500, 8))
    stats = FeatureStats(x.mean(0), np.cov(x, rowvar=False), 500)
    assert fid(stats, stats) == pytest.approx(0.0, abs=1e-6)


def test_fid_matches_analytic_frechet_for_equal_covariances():
    d, m, n = 16, 0.5, 10_000
    rng = np.random.default_rng(8)
    xa = rng.normal(0.0, 1.0, (n, d))
    xb = rng.normal(m, 1.0, (n, d))
    sa = FeatureStats(xa.mean(0), np.cov(xa, rowvar=False), n)
    sb = FeatureStats(xb.mean(0), np.cov(xb, rowvar=False), n)
    expected = frechet_equal_cov(np.zeros(d), np.full(d, m))  # d * m^2 = 4.0
    assert expected == 4.0
    assert fid(sa, sb) == pytest.approx(expected, rel=0.05)


def test_fid_symmetric():
    rng = np.random.default_rng(9)
    xa = rng.normal(0, 1, (200, 6))
    xb = rng.normal(0.3, 1.2, (200, 6))
    sa = FeatureStats(xa.mean(0), np.cov(xa, rowvar=False), 200)
    sb = FeatureStats(xb.mean(0), np.cov(xb, rowvar=False), 200)
    assert fid(sa, sb) == pytest.approx(fid(sb, sa), abs=1e-8)


def test_fid_dimension_mismatch():
    rng = np.random.default_rng(10)
    xa = rng.normal(0, 1, (50, 4))
    xb = rng.normal(0, 1, (50, 6))
    sa = FeatureStats(xa.mean(0), np.cov(xa, rowvar=False), 50)
    sb = FeatureStats(xb.mean(0), np.cov(xb, rowvar=False), 50)
    with pytest.raises(ValueError, match="dimension"):
        fid(sa, sb)


def test_feature_stats_rejects_non_psd():
    sigma = np.array([[1.0, 0.0], [0.0, -0.5]])
    with pytest.raises(ValueError, match="PSD"):
        FeatureStats(np.zeros(2), sigma, 10)


# ---------------------------------------------------------------------------
# LPIPS


def test_lpips_identity_within_tolerance(extractor):
    rng = np.random.default_rng(11)
    img = (rng.random((64, 64)).astype(np.float32) * 2 - 1).clip(-1, 1)
    assert lpips(img, img, extractor) == pytest.approx(0.0, abs=1e-6)
    assert lpips(img, img, extractor) >= 0.0


def test_lpips_symmetric(extractor):
    rng = np.random.default_rng(12)
    a = (rng.random((64, 64)).astype(np.float32) * 2 - 1).clip(-1, 1)
    b = (rng.random((64, 64)).astype(np.float32) * 2 - 1).clip(-1, 1)
    assert lpips(a, b, extractor) == pytest.approx(lpips(b, a, extractor), abs=1e-12)


def test_lpips_monotone_under_noise(extractor):
    spec = PhantomSpec(image_size=64, n_slices=2, seed=77)
    slices = [hu_window(generate_study(spec, k).ct[0]) for k in range(8)]
    rng = np.random.default_rng(13)
    means = []
    for sigma in (0.05, 0.1, 0.2):
        vals = []
        for img in slices:
            noisy = np.clip(img + sigma * rng.standard_normal(img.shape).astype(np.float32), -1, 1)
            vals.append(lpips(img, noisy, extractor))
        means.append(np.mean(vals))
    assert means[0] <= means[1] <= means[2]


def test_lpips_squared_l2_variant(extractor):
    rng = np.random.default_rng(14)
    a = (rng.random((64, 64)).astype(np.float32) * 2 - 1).clip(-1, 1)
    b = (rng.random((64, 64)).astype(np.float32) * 2 - 1).clip(-1, 1)
    cos = lpips(a, b, extractor, distance="cosine")
    sq = lpips(a, b, extractor, distance="squared_l2")
    assert sq == pytest.approx(2.0 * cos, rel=1e-6)  # ||ua-ub||^2 = 2(1-cos)
    with pytest.raises(ValueError, match="distance"):
        lpips(a, b, extractor, distance="manhattan")


# ---------------------------------------------------------------------------
# alignment


@pytest.fixture(scope="module")
def phantom_u8():
    spec = PhantomSpec(image_size=128, n_slices=1, seed=5)
    img = hu_window(generate_study(spec, 0).ct[0])
    return np.clip(np.floor(255 * (img + 1) / 2 + 0.5), 0, 255).astype(np.uint8)


def test_align_identity(phantom_u8):
    aligned, t = align_for_metrics(phantom_u8, phantom_u8)
    assert t.is_identity
    assert np.array_equal(aligned, phantom_u8)


def test_align_recovers_translation(phantom_u8):
    shifted = ndimage.shift(phantom_u8.astype(float), (3.0, -2.0), order=1, cval=0)
    shifted = np.clip(np.floor(shifted + 0.5), 0, 255).astype(np.uint8)
    aligned, t = align_for_metrics(shifted, phantom_u8)
    assert abs(t.dy - (-3.0)) <= 0.5 and abs(t.dx - 2.0) <= 0.5
    assert ncc(aligned, phantom_u8) > ncc(shifted, phantom_u8)


def test_align_recovers_scale(phantom_u8):
    scaled = _rescale_about_center(phantom_u8.astype(float), 1.05)
    scaled = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    aligned, t = align_for_metrics(scaled, phantom_u8)
    assert abs(t.scale - 1.0 / 1.05) <= 0.01
    assert ncc(aligned, phantom_u8) > ncc(scaled, phantom_u8)


def test_align_never_worse_than_identity(phantom_u8):
    rng = np.random.default_rng(15)
    noisy = np.clip(phantom_u8 + rng.integers(-20, 21, phantom_u8.shape), 0, 255).astype(np.uint8)
    aligned, t = align_for_metrics(noisy, phantom_u8)
    assert ncc(aligned, phantom_u8) >= ncc(noisy, phantom_u8) - 1e-9


def test_align_degenerate_reference_warns():
    candidate = np.random.default_rng(16).integers(0, 255, (64, 64)).astype(np.uint8)
    flat = np.full((64, 64), 7, dtype=np.uint8)
    with pytest.warns(UserWarning, match="constant"):
        aligned, t = align_for_metrics(candidate, flat)
    assert t.degenerate_reference
    assert np.array_equal(aligned, candidate)


def test_alignment_transform_validation():
    with pytest.raises(ValueError, match="scale"):
        AlignmentTransform(scale=0.0)


# ---------------------------------------------------------------------------
# evaluate_run


def _write_export_dir(path, images):
    path.mkdir(parents=True, exist_ok=True)
    for name, img in images.items():
        export_png(img, path / name)


def test_evaluate_run_self_comparison(tmp_path, extractor):
    rng = np.random.default_rng(17)
    images = {
        f"s_{i:03d}.png": (rng.random((32, 32)).astype(np.float32) * 2 - 1) for i in range(4)
    }
    _write_export_dir(tmp_path / "gen", images)
    _write_export_dir(tmp_path / "ref", images)
    report = evaluate_run(tmp_path / "gen", tmp_path / "ref", extractor=extractor, out_dir=tmp_path / "out")
    agg = report.aggregate
    assert agg["MAE"] == 0.0
    assert agg["SSIM"] == pytest.approx(1.0, abs=1e-12)
    assert agg["PSNR"] == math.inf
    assert agg["LPIPS"] == pytest.approx(0.0, abs=1e-6)
    assert agg["FID"] == pytest.approx(0.0, abs=1e-6)
    assert (tmp_path / "out" / "metrics.csv").exists()
    payload = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert payload["aggregate"]["PSNR"] == "inf"


def test_evaluate_run_unmatched_files_listed(tmp_path, extractor):
    rng = np.random.default_rng(18)
    img = rng.random((32, 32)).astype(np.float32) * 2 - 1
    _write_export_dir(tmp_path / "gen", {"a.png": img, "b.png": img})
    _write_export_dir(tmp_path / "ref", {"a.png": img, "c.png": img})
    with pytest.raises(ValueError, match=r"c\.png"):
        evaluate_run(tmp_path / "gen", tmp_path / "ref", extractor=extractor)


def test_evaluate_run_aggregate_is_mean_of_pairs(tmp_path, extractor):
    rng = np.random.default_rng(19)
    gen = {f"p_{i}.png": rng.random((32, 32)).astype(np.float32) * 2 - 1 for i in range(3)}
    ref = {k: np.clip(v + 0.1 * rng.standard_normal(v.shape).astype(np.float32), -1, 1) for k, v in gen.items()}
    _write_export_dir(tmp_path / "gen", gen)
    _write_export_dir(tmp_path / "ref", ref)
    report = evaluate_run(tmp_path / "gen", tmp_path / "ref", extractor=extractor)
    for col in ("MAE", "SSIM", "LPIPS"):
        assert report.aggregate[col] == pytest.approx(
            np.mean([row[col] for row in report.pairs]), abs=1e-9
        )


def test_ncc_agrees_with_pearson_oracle(phantom_u8):
    rng = np.random.default_rng(20)
    noisy = np.clip(phantom_u8 + rng.integers(-10, 11, phantom_u8.shape), 0, 255).astype(np.uint8)
    m = 8
    crop_a = phantom_u8[m:-m, m:-m]
    crop_b = noisy[m:-m, m:-m]
    assert ncc(phantom_u8, noisy, margin=m) == pytest.approx(pearson(crop_a, crop_b), abs=1e-12)
