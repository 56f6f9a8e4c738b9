"""Wiener deconvolution and blind estimation of linear motion kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from ..imagecore import as_image, to_luma
from ..perceive import stats

logger = logging.getLogger(__name__)

NSR_GRID = (0.002, 0.01, 0.05)
FALLBACK_LENGTHS = (9, 13, 17, 21)
FALLBACK_ANGLES = (0.0, 45.0, 90.0, 135.0)
# below this residual anisotropy the blur has no usable direction
MIN_ANISOTROPY = 2.0
WELCH_PATCH = 128
WELCH_STRIDE = 32


def psf_to_otf(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-pad the kernel to ``shape`` with its centre moved to the origin, then FFT."""
    kh, kw = kernel.shape
    pad = np.zeros(shape, dtype=np.float64)
    pad[:kh, :kw] = kernel
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def _taper_weights(n: int, pad: int) -> np.ndarray:
    w = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, pad))
    w[:pad] = ramp
    w[n - pad:] = ramp[::-1]
    return w


def wiener_deconvolve(img: np.ndarray, kernel: np.ndarray, nsr: float) -> np.ndarray:
    """Per-channel Wiener filter ``conj(K) Y / (|K|^2 + nsr)``.

    The image is edge-padded and the pad is cross-faded into its own blurred
    copy (edge tapering), so the periodic extension the FFT assumes is
    consistent with the blur and long kernels do not ring from the borders.
    """
    img = as_image(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    h, w = img.shape[:2]
    pad = max(kernel.shape) * 2
    padded = np.pad(img.astype(np.float64), ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    otf = psf_to_otf(kernel, padded.shape[:2])
    weight = np.outer(_taper_weights(padded.shape[0], pad), _taper_weights(padded.shape[1], pad))
    filt = np.conj(otf) / (np.abs(otf) ** 2 + nsr)
    out = np.empty_like(padded)
    for c in range(3):
        spec = np.fft.fft2(padded[..., c])
        blurred = np.real(np.fft.ifft2(spec * otf))
        tapered = weight * padded[..., c] + (1.0 - weight) * blurred
        out[..., c] = np.real(np.fft.ifft2(np.fft.fft2(tapered) * filt))
    return as_image(out[pad:pad + h, pad:pad + w])


@dataclass(frozen=True)
class MotionEstimate:
    length: float
    angle: float
    from_grid: bool


def _welch_spectrum(luma: np.ndarray) -> np.ndarray:
    """Mean power spectrum (fftshifted) over Hann-windowed patches."""
    h, w = luma.shape
    size = min(WELCH_PATCH, h, w)
    win = np.outer(np.hanning(size), np.hanning(size))
    acc = np.zeros((size, size))
    n = 0
    for y in range(0, h - size + 1, WELCH_STRIDE):
        for x in range(0, w - size + 1, WELCH_STRIDE):
            p = luma[y:y + size, x:x + size].astype(np.float64)
            acc += np.abs(np.fft.fft2((p - p.mean()) * win)) ** 2
            n += 1
    return np.fft.fftshift(acc / max(n, 1))


def _slice(spec: np.ndarray, angle: float, freqs: np.ndarray) -> np.ndarray:
    """Spectrum sampled along a line through DC; ``freqs`` in cycles/pixel, image y pointing down."""
    size = spec.shape[0]
    theta = np.deg2rad(angle)
    cx = size // 2 + freqs * size * np.cos(theta)
    cy = size // 2 - freqs * size * np.sin(theta)
    return map_coordinates(spec, [cy, cx], order=1, mode="nearest")


def motion_length_from_spectrum(luma: np.ndarray, angle: float) -> float | None:
    """Blur length from the first dip of the along-motion spectrum relative to the across-motion one."""
    spec = _welch_spectrum(luma)
    freqs = np.linspace(1.0 / 40.0, 1.0 / 6.0, 120)
    along = np.log(_slice(spec, angle, freqs) + 1e-20)
    across = np.log(_slice(spec, angle + 90.0, freqs) + 1e-20)
    rel = along - across
    # first local minimum that dips clearly below its surroundings
    for i in range(2, len(rel) - 2):
        if rel[i] <= rel[i - 1] and rel[i] <= rel[i + 1]:
            left = rel[max(0, i - 12):i].max()
            right = rel[i + 1:i + 13].max()
            if min(left, right) - rel[i] > 0.5:
                return float(1.0 / freqs[i])
    return None


def estimate_motion_kernel(img: np.ndarray, probe=None) -> MotionEstimate:
    """Blind (length, angle) estimate for linear motion blur.

    The angle is the structure-tensor principal axis of the fine-scale residual
    rotated by 90 degrees (motion suppresses gradients along its own direction).
    The length comes from the first spectral zero along that angle. When the
    residual is isotropic, the (length, angle) grid is scored with ``probe``
    (image -> quality); when only the length is missing, the length grid at the
    estimated angle is scored. Without a probe a length of 15 is used.
    """
    luma = to_luma(img)
    aniso, grad_theta = stats.highpass_anisotropy(luma)
    angle = float(np.mod(grad_theta + 90.0, 180.0))
    if aniso >= MIN_ANISOTROPY:
        length = motion_length_from_spectrum(luma, angle)
        if length is not None:
            return MotionEstimate(float(np.clip(length, 3.0, 41.0)), angle, False)
    if probe is None:
        return MotionEstimate(15.0, angle if aniso >= MIN_ANISOTROPY else 0.0, True)
    from ..degrade import motion_kernel
    angles = (angle,) if aniso >= MIN_ANISOTROPY else FALLBACK_ANGLES
    best, best_q = None, -np.inf
    for length in FALLBACK_LENGTHS:
        for ang in angles:
            q = probe(wiener_deconvolve(img, motion_kernel(length, ang), 0.01))
            if q > best_q + 1e-12:
                best, best_q = (length, ang), q
    logger.debug("motion kernel from fallback grid: %s", best)
    return MotionEstimate(float(best[0]), float(best[1]), True)


# first zero of the disk OTF 2*J1(2*pi*f*r)/(2*pi*f*r) sits at f = 0.6098 / r
_DISK_FIRST_ZERO = 3.8317 / (2.0 * np.pi)
MAX_DISK_RADIUS = 7.0


def _radial_profile(spec: np.ndarray, freqs: np.ndarray, width: float = 0.004) -> np.ndarray:
    n = spec.shape[0]
    yy, xx = np.indices(spec.shape)
    rad = np.hypot(yy - n // 2, xx - n // 2) / n
    return np.array([np.log(spec[np.abs(rad - f) < width].mean() + 1e-20) for f in freqs])


def estimate_defocus_radius(img: np.ndarray) -> float | None:
    """Disk radius from the detrended radial log-spectrum.

    The first dip at least half as deep as the deepest one is taken as the
    first zero of the disk OTF; None when no clear dip exists.
    """
    spec = _welch_spectrum(to_luma(img))
    if spec.shape[0] < 64:
        # annuli too thin to sample at this size
        return None
    freqs = np.linspace(_DISK_FIRST_ZERO / MAX_DISK_RADIUS, 0.4, 120)
    prof = _radial_profile(spec, freqs)
    design = np.vstack([np.log(freqs), np.ones_like(freqs)]).T
    rel = prof - design @ np.linalg.lstsq(design, prof, rcond=None)[0]
    dips = []
    for i in range(2, len(rel) - 2):
        if rel[i] <= rel[i - 1] and rel[i] <= rel[i + 1]:
            depth = min(rel[max(0, i - 12):i].max(), rel[i + 1:i + 13].max()) - rel[i]
            if depth > 0.3:
                dips.append((depth, i))
    if not dips:
        return None
    # shallow low-frequency wiggles of natural spectra come before the blur zero; skip them
    deepest = max(d for d, _ in dips)
    first = next(i for d, i in dips if d >= 0.5 * deepest)
    return float(_DISK_FIRST_ZERO / freqs[first])
