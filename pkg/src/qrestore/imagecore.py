"""Image representation, codecs and shared numerical kernels.

Images are ``float32`` arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``.
Planes are ``(H, W)`` arrays with unbounded range (luma, residuals, spectra).
"""

from __future__ import annotations

import io
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "DecodeError",
    "UnsupportedFormat",
    "KernelTooLarge",
    "ImageTooSmall",
    "as_image",
    "load_image",
    "save_image",
    "encode_png",
    "quantize",
    "to_luma",
    "convolve2d",
    "resize",
    "fft2",
    "ifft2",
    "gaussian_kernel",
    "check_min_size",
]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class DecodeError(ValueError):
    pass


class UnsupportedFormat(ValueError):
    pass


class KernelTooLarge(ValueError):
    pass


class ImageTooSmall(ValueError):
    pass


def as_image(arr) -> np.ndarray:
    """Coerce to a contiguous, clamped float32 ``(H, W, 3)`` image."""
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.ascontiguousarray(np.clip(img, 0.0, 1.0))


def check_min_size(arr: np.ndarray, minimum: int) -> None:
    if min(arr.shape[0], arr.shape[1]) < minimum:
        raise ImageTooSmall(f"min dimension {min(arr.shape[:2])} < {minimum}")


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "JPEG"):
                raise UnsupportedFormat(f"{path}: format {fmt!r} not supported")
            im.load()
            if im.mode in ("L", "I;16", "I", "1", "P", "LA"):
                im = im.convert("L")
                data = np.asarray(im, dtype=np.uint8)
                data = np.repeat(data[:, :, None], 3, axis=2)
            else:
                data = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: cannot decode") from exc
    except OSError as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise DecodeError(f"{path}: {exc}") from exc
    return data.astype(np.float32) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Round-half-up to 8 bit: ``floor(255 * s + 0.5)``."""
    scaled = np.floor(np.clip(img, 0.0, 1.0).astype(np.float64) * 255.0 + 0.5)
    return scaled.astype(np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(quantize(as_image(img)), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_image(img: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(img))


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    return img[..., 0] * LUMA_WEIGHTS[0] + img[..., 1] * LUMA_WEIGHTS[1] + img[..., 2] * LUMA_WEIGHTS[2]


def convolve2d(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution with reflect-101 borders, output same size."""
    plane = np.asarray(plane, dtype=np.float32)
    kernel = np.asarray(kernel, dtype=np.float32)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {kernel.shape}")
    limit = 2 * min(plane.shape[0], plane.shape[1])
    if kh >= limit or kw >= limit:
        raise KernelTooLarge(f"kernel {kernel.shape} too large for plane {plane.shape}")
    # filter2D correlates; flip for convolution
    flipped = np.ascontiguousarray(kernel[::-1, ::-1])
    ph, pw = kh // 2, kw // 2
    if ph >= plane.shape[0] or pw >= plane.shape[1]:
        padded = np.pad(plane, ((ph, ph), (pw, pw)), mode="reflect")
        out = cv2.filter2D(padded, cv2.CV_32F, flipped, borderType=cv2.BORDER_REFLECT_101)
        return out[ph:ph + plane.shape[0], pw:pw + plane.shape[1]]
    return cv2.filter2D(plane, cv2.CV_32F, flipped, borderType=cv2.BORDER_REFLECT_101)


def convolve_image(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.stack([convolve2d(img[..., c], kernel) for c in range(3)], axis=2)
    return np.clip(out, 0.0, 1.0)


def resize(img: np.ndarray, width: int, height: int, filter: str = "bicubic") -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError("target dimensions must be positive")
    img = np.asarray(img, dtype=np.float32)
    if img.shape[1] == width and img.shape[0] == height:
        return np.clip(img, 0.0, 1.0).copy()
    if filter == "bicubic":
        interp = cv2.INTER_CUBIC
    elif filter == "box":
        interp = cv2.INTER_AREA
    else:
        raise ValueError(f"unknown filter {filter!r}")
    out = cv2.resize(img, (width, height), interpolation=interp)
    if out.ndim == 2 and img.ndim == 3:
        out = out[:, :, None]
    return np.clip(out, 0.0, 1.0)


def fft2(plane: np.ndarray) -> np.ndarray:
    return np.fft.fft2(np.asarray(plane, dtype=np.float64))


def ifft2(grid: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(grid)).astype(np.float32)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError("size must be odd")
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return (k / k.sum()).astype(np.float32)
