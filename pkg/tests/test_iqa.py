import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrestore.corpus import pristine_crops
from qrestore.degrade import DegradationKind as K, DegradationStep, apply_step, recipe_rng
from qrestore.imagecore import ImageTooSmall, gaussian_kernel
from qrestore.iqa.brisque import brisque_score, fit_ridge
from qrestore.iqa.calibrate import _canonical_order, _p1_p99
from qrestore.iqa.cpbd import cpbd_details, cpbd_score
from qrestore.iqa.nss import MSCN_C, fit_feature_model, fit_ggd, mahalanobis_distance, mscn, niqe_score, nss_features
from qrestore.iqa.proxies import ModelMissing, clarity_proxy, local_distortion_proxy, normalize
from qrestore.iqa.quality import SLOTS, MetricVector, MissingSlots, QualityMode, measure, quality_score


def _reflect(i, n):
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def test_mscn_matches_scalar_oracle(rng):
    plane = rng.random((16, 16)).astype(np.float32)
    k = gaussian_kernel(7, 7 / 6).astype(np.float64)
    out = mscn(plane)
    for y in range(16):
        for x in range(16):
            mu = sq = 0.0
            for j in range(7):
                for i in range(7):
                    v = float(plane[_reflect(y + j - 3, 16), _reflect(x + i - 3, 16)])
                    mu += k[j, i] * v
                    sq += k[j, i] * v * v
            sigma = np.sqrt(abs(sq - mu * mu))
            assert abs(out[y, x] - (plane[y, x] - mu) / (sigma + MSCN_C)) < 1e-4


def test_mscn_constant_and_small():
    assert np.abs(mscn(np.full((20, 20), 0.4, np.float32))).max() <= 1e-6
    with pytest.raises(ImageTooSmall):
        mscn(np.zeros((8, 20), np.float32))


def test_mscn_mean_near_zero_on_photos():
    from qrestore.imagecore import to_luma
    for _, img in pristine_crops(10, seed=21):
        assert -0.1 <= float(mscn(to_luma(img)).mean()) <= 0.1


def test_ggd_fit_recovers_shape():
    rng = np.random.default_rng(0)
    alpha, _ = fit_ggd(rng.normal(size=200_000))
    assert 1.8 <= alpha <= 2.2
    alpha, _ = fit_ggd(rng.laplace(size=200_000))
    assert 0.85 <= alpha <= 1.15


def test_nss_features_finite_on_constant():
    f = nss_features(np.full((64, 64, 3), 0.5, np.float32))
    assert f.shape == (36,) and np.isfinite(f).all()
    with pytest.raises(ImageTooSmall):
        nss_features(np.zeros((20, 64, 3), np.float32))


def test_mahalanobis_matches_explicit_inverse(rng):
    a = rng.normal(size=(50, 6))
    b = rng.normal(size=(40, 6)) + 0.3
    mu1, mu2 = a.mean(0), b.mean(0)
    c1, c2 = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    pooled = (c1 + c2) / 2
    pooled = pooled + 1e-6 * np.trace(pooled) / 6 * np.eye(6)
    d = mu1 - mu2
    oracle = np.sqrt(d @ np.linalg.inv(pooled) @ d)
    assert abs(mahalanobis_distance(mu1, c1, mu2, c2) - oracle) < 1e-6


def test_percentiles_match_full_sort(rng):
    v = rng.normal(size=257)
    s = np.sort(v)

    def pct(q):
        pos = q / 100 * (len(s) - 1)
        lo = int(np.floor(pos))
        return s[lo] + (pos - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])

    p1, p99 = _p1_p99(v)
    assert abs(p1 - pct(1)) < 1e-6 and abs(p99 - pct(99)) < 1e-6


def test_feature_model_permutation_invariant(rng):
    rows = rng.normal(size=(30, 36))
    a = fit_feature_model(rows)
    b = fit_feature_model(rows[rng.permutation(30)])
    np.testing.assert_allclose(a.feature_mean, b.feature_mean, atol=1e-12)
    np.testing.assert_allclose(a.feature_cov, b.feature_cov, atol=1e-12)
    imgs = [rng.random((8, 8, 3)).astype(np.float32) for _ in range(5)]
    order = _canonical_order(imgs)
    shuffled = _canonical_order([imgs[i] for i in (3, 1, 4, 0, 2)])
    assert all(np.array_equal(x, y) for x, y in zip(order, shuffled))


def test_model_covariance_psd(calibration):
    assert np.linalg.eigvalsh(calibration.model.feature_cov).min() >= -1e-8


def test_normalize_clamps():
    table = {"x": [1.0, 3.0]}
    assert normalize(2.0, table, "x") == 0.5
    assert normalize(-5.0, table, "x") == 0.0
    assert normalize(9.0, table, "x") == 1.0
    with pytest.raises(ModelMissing):
        normalize(1.0, table, "y")


def test_quality_examples():
    assert quality_score(MetricVector(0, 0, 1, 1, 1), QualityMode.RAW_EQ1).value == pytest.approx(0.6)
    assert quality_score(MetricVector(0, 0, 0, 0, 0), QualityMode.RAW_EQ1).value == 0.0
    with pytest.raises(MissingSlots):
        quality_score(MetricVector(0, 0, 0, 0, 0), QualityMode.NORMALIZED)
    v = MetricVector(5, 50, 0.5, 0.5, 0.5, normalized=(0.0, 0.0, 1.0, 1.0, 1.0))
    assert quality_score(v).value == pytest.approx(1.0)


@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5), st.sampled_from(SLOTS), st.floats(1e-3, 10))
def test_quality_sign_contract(vals, slot, delta):
    sign = {"ni": -1, "br": -1, "cp": 1, "cl": 1, "hy": 1}[slot]
    base = MetricVector(*vals)
    bumped = MetricVector(**{**dict(zip(SLOTS, vals)), slot: dict(zip(SLOTS, vals))[slot] + delta})
    diff = quality_score(bumped, "RawEq1").value - quality_score(base, "RawEq1").value
    assert diff * sign > 0
    assert abs(diff - sign * delta / 5) < 1e-9 * max(1.0, max(abs(v) for v in vals))


def test_metric_vector_rejects_bad_values():
    with pytest.raises(ValueError):
        MetricVector(float("nan"), 0, 0, 0, 0)
    with pytest.raises(ValueError):
        MetricVector(0, 0, 0, 0, 0, normalized=(0, 0, 0, 0, 1.5))


def test_cpbd_sharp_edge_and_range():
    img = np.zeros((96, 96, 3), np.float32)
    img[:, 48:] = 1.0
    img[30:60, 10:30] = 0.7
    assert cpbd_score(img) >= 0.9
    score, n = cpbd_details(np.full((64, 64, 3), 0.5, np.float32))
    assert score == 0.0 and n == 0


@pytest.fixture(scope="module")
def held_out():
    return [img for _, img in pristine_crops(100, seed=21)]


def _paired(held_out, step, metric, seed=0):
    wins = []
    for i, img in enumerate(held_out):
        deg = apply_step(img, step, recipe_rng(seed, "pair", i))
        wins.append(metric(img, deg))
    return float(np.mean(wins))


def test_noise_raises_niqe(calibration, held_out):
    rate = _paired(held_out, DegradationStep(K.NOISE, {"sigma": 50 / 255}, "high"),
                   lambda a, b: niqe_score(a, calibration.model) < niqe_score(b, calibration.model))
    assert rate >= 0.9


def test_blur_lowers_cpbd(held_out):
    rate = _paired(held_out, DegradationStep(K.DEFOCUS_BLUR, {"radius": 4.0}),
                   lambda a, b: cpbd_score(a) > cpbd_score(b))
    assert rate >= 0.9


def test_jpeg_lowers_hy(calibration, held_out):
    t, k = calibration.model.percentile_table, calibration.model.reference_stats["mscn_kurtosis"]
    rate = _paired(held_out, DegradationStep(K.JPEG, {"quality": 10}),
                   lambda a, b: local_distortion_proxy(a, t, k) > local_distortion_proxy(b, t, k))
    assert rate >= 0.9


def test_haze_lowers_cl(calibration, held_out):
    t = calibration.model.percentile_table
    rate = _paired(held_out, DegradationStep(K.HAZE, {"t": 0.5, "airlight": [0.9, 0.9, 0.9]}),
                   lambda a, b: clarity_proxy(a, t) > clarity_proxy(b, t))
    assert rate >= 0.9


def test_brisque_separates_noise(calibration, held_out):
    reg = calibration.regressor
    clean = [brisque_score(img, reg) for img in held_out[:40]]
    noisy = [brisque_score(apply_step(img, DegradationStep(K.NOISE, {"sigma": 50 / 255}, "high"),
                                      recipe_rng(1, "b", i)), reg) for i, img in enumerate(held_out[:40])]
    assert np.mean(noisy) - np.mean(clean) >= 10
    assert all(0 <= v <= 100 for v in clean + noisy)


def test_brisque_requires_regressor(held_out):
    with pytest.raises(ModelMissing):
        brisque_score(held_out[0], None)


def test_ridge_recovers_linear_map(rng):
    x = rng.normal(size=(200, 4))
    y = 30 + x @ np.array([5.0, -3.0, 0.0, 2.0])
    reg = fit_ridge(x, y, alpha=1e-6)
    np.testing.assert_allclose(reg.predict(x), y, atol=1e-3)


def test_clarity_of_gray_is_low(calibration):
    assert clarity_proxy(np.full((64, 64, 3), 0.5, np.float32), calibration.model.percentile_table) <= 0.05


def test_measure_finite_and_repeatable(calibration, held_out):
    img = apply_step(held_out[0], DegradationStep(K.JPEG, {"quality": 15}), recipe_rng(0))
    a = measure(img, calibration.model, calibration.regressor)
    b = measure(img, calibration.model, calibration.regressor)
    assert a == b
    assert all(np.isfinite(a.raw())) and all(0 <= v <= 1 for v in a.normalized)
    assert niqe_score(img, calibration.model) >= 0
