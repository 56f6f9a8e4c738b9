import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from qrestore.imagecore import (DecodeError, KernelTooLarge, UnsupportedFormat, convolve2d, encode_png, fft2,
                                gaussian_kernel, ifft2, load_image, quantize, resize, save_image, to_luma)


def naive_convolve(plane, kernel):
    """Quadruple loop with reflect-101 borders."""
    h, w = plane.shape
    kh, kw = kernel.shape
    out = np.zeros((h, w))

    def reflect(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i

    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(kh):
                for i in range(kw):
                    yy = reflect(y + kh // 2 - j, h)
                    xx = reflect(x + kw // 2 - i, w)
                    acc += float(kernel[j, i]) * float(plane[yy, xx])
            out[y, x] = acc
    return out


def test_convolve_matches_naive_oracle(rng):
    plane = rng.random((5, 5)).astype(np.float32)
    kernel = rng.random((3, 3)).astype(np.float32)
    assert np.max(np.abs(convolve2d(plane, kernel) - naive_convolve(plane, kernel))) < 1e-5


def test_convolve_asymmetric_kernel_is_true_convolution(rng):
    plane = rng.random((9, 11)).astype(np.float32)
    kernel = np.zeros((3, 5), np.float32)
    kernel[0, 4] = 1.0
    np.testing.assert_allclose(convolve2d(plane, kernel), naive_convolve(plane, kernel), atol=1e-6)


def test_convolve_identity_and_dc(rng):
    plane = rng.random((8, 8)).astype(np.float32)
    np.testing.assert_array_equal(convolve2d(plane, np.ones((1, 1), np.float32)), plane)
    const = np.full((16, 16), 0.3, np.float32)
    np.testing.assert_allclose(convolve2d(const, gaussian_kernel(5, 1.0)), 0.3, atol=1e-6)


def test_convolve_kernel_too_large():
    with pytest.raises(KernelTooLarge):
        convolve2d(np.zeros((4, 4), np.float32), np.ones((9, 9), np.float32) / 81)


@given(arrays(np.float32, (6, 7), elements=st.floats(-1, 1, width=32)),
       arrays(np.float32, (6, 7), elements=st.floats(-1, 1, width=32)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_convolve_is_linear(p, q, a, b):
    k = gaussian_kernel(3, 0.8)
    lhs = convolve2d(a * p + b * q, k)
    rhs = a * convolve2d(p, k) + b * convolve2d(q, k)
    assert np.max(np.abs(lhs - rhs)) < 1e-5


def test_luma_examples(rng):
    assert to_luma(np.ones((2, 2, 3), np.float32))[0, 0] == pytest.approx(1.0, abs=1e-6)
    red = np.zeros((1, 1, 3), np.float32)
    red[..., 0] = 1
    assert to_luma(red)[0, 0] == pytest.approx(0.299, abs=1e-7)
    img = rng.random((16, 16, 3)).astype(np.float32)
    oracle = np.array([[0.299 * float(img[y, x, 0]) + 0.587 * float(img[y, x, 1]) + 0.114 * float(img[y, x, 2])
                        for x in range(16)] for y in range(16)])
    assert np.max(np.abs(to_luma(img) - oracle)) < 1e-6


def test_quantization_endpoints():
    assert quantize(np.array([1.0, 0.5, 0.0]))[0] == 255
    assert quantize(np.array([1.0, 0.5, 0.0]))[1] == 128
    assert quantize(np.array([1.0, 0.5, 0.0]))[2] == 0


def test_png_round_trip(tmp_path, rng):
    img = rng.random((20, 30, 3)).astype(np.float32)
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape and back.dtype == np.float32
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-7


def test_zero_png_and_white(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "z.png")
    z = load_image(tmp_path / "z.png")
    assert z.shape == (4, 4, 3) and not z.any()
    Image.fromarray(np.full((2, 2, 3), 255, np.uint8)).save(tmp_path / "w.png")
    assert np.all(load_image(tmp_path / "w.png") == 1.0)


def test_save_load_idempotent_on_8bit(tmp_path, rng):
    for i in range(20):
        data = rng.integers(0, 256, (8, 9, 3), dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(data).save(buf, format="PNG")
        p = tmp_path / f"{i}.png"
        p.write_bytes(buf.getvalue())
        assert encode_png(load_image(p)) == p.read_bytes()


def test_decode_errors(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\nbroken")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "bad.png")
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "a.bmp")
    with pytest.raises(UnsupportedFormat):
        load_image(tmp_path / "a.bmp")


def test_resize_examples(rng):
    img = rng.random((10, 12, 3)).astype(np.float32)
    assert np.max(np.abs(resize(img, 12, 10) - img)) <= 1e-6
    const = np.full((10, 12, 3), 0.25, np.float32)
    np.testing.assert_allclose(resize(const, 37, 23), 0.25, atol=1e-5)
    checker = (np.indices((8, 8)).sum(0) % 2).astype(np.float32)
    checker = np.repeat(checker[:, :, None], 3, 2)
    np.testing.assert_allclose(resize(checker, 4, 4, "box"), 0.5, atol=1e-6)


def test_fft_examples(rng):
    imp = np.zeros((8, 8))
    imp[0, 0] = 1
    np.testing.assert_allclose(np.abs(fft2(imp)), 1.0)
    spec = fft2(np.full((4, 4), 2.0))
    assert spec[0, 0] == pytest.approx(32.0)
    assert np.abs(spec).sum() == pytest.approx(32.0)
    p = rng.random((32, 32)).astype(np.float32)
    assert np.max(np.abs(ifft2(fft2(p)) - p)) < 1e-5
    assert np.sum(p.astype(np.float64) ** 2) == pytest.approx(np.sum(np.abs(fft2(p)) ** 2) / p.size, rel=1e-4)


def test_gaussian_kernel_sums_to_one():
    for size, sigma in [(3, 0.5), (7, 7 / 6), (11, 1.5)]:
        assert gaussian_kernel(size, sigma).sum() == pytest.approx(1.0, abs=1e-6)
