import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrestore.degrade import (LABEL_NAMES, NOISE_SIGMAS, DegradationKind as K, DegradationStep, EmptySourceSet,
                              Manifest, ParamOutOfRange, Recipe, apply_recipe, apply_step, disk_kernel,
                              generate_dataset, motion_kernel, recipe_rng, recipe_to_label, sample_recipe)
from qrestore.imagecore import save_image


def step(kind, severity="mid", **params):
    return DegradationStep(kind, params, severity)


def test_exactly_eight_kinds():
    assert len(K) == 8


def test_noise_endpoints(small_crops):
    img = small_crops[0]
    out = apply_step(img, step(K.NOISE, "low", sigma=0.0), recipe_rng(0))
    np.testing.assert_array_equal(out, img)


def test_haze_endpoints(small_crops):
    img = small_crops[0]
    a = [0.9, 0.85, 0.8]
    np.testing.assert_allclose(apply_step(img, step(K.HAZE, t=1.0, airlight=a), recipe_rng(0)), img, atol=1e-6)
    flat = apply_step(img, step(K.HAZE, t=0.0, airlight=a), recipe_rng(0))
    np.testing.assert_allclose(flat, np.broadcast_to(np.array(a, np.float32), img.shape), atol=1e-6)


def test_noise_high_moment():
    img = np.full((256, 256, 3), 0.5, np.float32)
    out = apply_step(img, step(K.NOISE, "high", sigma=NOISE_SIGMAS["high"]), recipe_rng(5))
    sd = float((out - 0.5).std())
    assert 0.9 * 50 / 255 <= sd <= 1.1 * 50 / 255


def test_param_out_of_range(small_crops):
    with pytest.raises(ParamOutOfRange):
        apply_step(small_crops[0], step(K.JPEG, quality=0), recipe_rng(0))
    with pytest.raises(ParamOutOfRange):
        apply_step(small_crops[0], step(K.MOTION_BLUR, length=9), recipe_rng(0))


def test_kernels_unit_sum():
    for length, angle in [(9, 0), (15, 33.0), (21, 179.0)]:
        assert motion_kernel(length, angle).sum() == pytest.approx(1.0, abs=1e-6)
    for r in (2.0, 3.7, 6.0):
        k = disk_kernel(r)
        assert k.sum() == pytest.approx(1.0, abs=1e-6) and k.shape[0] % 2 == 1


def test_labels():
    assert recipe_to_label(Recipe((step(K.NOISE, "low", sigma=10 / 255),))).tolist() == [1] + [0] * 9
    assert recipe_to_label(Recipe((step(K.JPEG, quality=20),))).tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    bits = recipe_to_label(Recipe((step(K.NOISE, "high", sigma=50 / 255),
                                   step(K.RAIN, angle=90.0, length=20, density=0.005, beta=0.7))))
    assert [LABEL_NAMES[i] for i in np.flatnonzero(bits)] == ["NI-H", "RA"]


def test_recipe_rejects_repeats_and_lengths():
    with pytest.raises(ValueError):
        Recipe((step(K.JPEG, quality=20), step(K.JPEG, quality=30)))
    with pytest.raises(ValueError):
        Recipe(())


def test_order_sensitivity_example(small_crops):
    img = small_crops[1]
    haze = step(K.HAZE, t=0.6, airlight=[0.9, 0.9, 0.9])
    noise = step(K.NOISE, "mid", sigma=25 / 255)
    a, _ = apply_recipe(img, Recipe((haze, noise), 3, "x"))
    b, _ = apply_recipe(img, Recipe((noise, haze), 3, "x"))
    assert np.abs(a - b).mean() > 1 / 255


def test_label_matches_recipe_on_many_recipes():
    rng = np.random.default_rng(0)
    img = np.full((16, 16, 3), 0.5, np.float32)
    for i in range(1000):
        r = sample_recipe(rng, i, str(i))
        bits = recipe_to_label(r)
        assert bits.sum() == len(r.steps)
        assert bits[:3].sum() <= 1
        if i < 20:
            assert np.array_equal(apply_recipe(img, r)[1], bits)


def test_step_count_distribution_uniform():
    rng = np.random.default_rng(42)
    counts = Counter(len(sample_recipe(rng).steps) for _ in range(10_000))
    for k in (1, 2, 3, 4):
        assert abs(counts[k] / 10_000 - 0.25) <= 0.02


@given(st.integers(0, 2 ** 32), st.integers(1, 4))
def test_degraded_output_valid_and_deterministic(seed, count):
    img = np.random.default_rng(seed).random((40, 40, 3)).astype(np.float32)
    r = sample_recipe(recipe_rng(seed), seed, "p", count=count)
    a, la = apply_recipe(img, r)
    b, lb = apply_recipe(img, r)
    assert a.shape == img.shape and a.dtype == np.float32
    assert np.isfinite(a).all() and a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, b)
    assert la.sum() == count and la[:3].sum() <= 1


def _sources(tmp_path, small_crops, n=5):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(n):
        save_image(small_crops[i], src / f"s{i}.png")
    return src


def test_generate_dataset_counts_and_determinism(tmp_path, small_crops):
    src = _sources(tmp_path, small_crops)
    m1 = generate_dataset(src, tmp_path / "a", 10, seed=9)
    m2 = generate_dataset(src, tmp_path / "b", 10, seed=9)
    assert len(m1.rows) == 50
    assert (tmp_path / "a/manifest.jsonl").read_bytes() == (tmp_path / "b/manifest.jsonl").read_bytes()
    for row in m1.rows[:5]:
        assert (tmp_path / "a" / row.degraded).read_bytes() == (tmp_path / "b" / row.degraded).read_bytes()
    rec = json.loads((tmp_path / "a/manifest.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"id", "source", "degraded", "steps", "label", "seed"}
    assert [s["order"] for s in rec["steps"]] == list(range(1, len(rec["steps"]) + 1))
    back = Manifest.read(tmp_path / "a/manifest.jsonl")
    assert back.dumps() == m1.dumps()
    assert back.source_path(back.rows[0]).is_file()


def test_generate_dataset_empty(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptySourceSet):
        generate_dataset(tmp_path / "empty", tmp_path / "out", 2)
