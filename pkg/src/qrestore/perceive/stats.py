"""Image statistics underlying the per-degradation detectors."""

from __future__ import annotations

import cv2
import numpy as np
from scipy.ndimage import minimum_filter

from ..imagecore import check_min_size, to_luma

IMMERKAER = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=np.float32)


def immerkaer_sigma(plane: np.ndarray) -> float:
    """sqrt(pi/2) / (6 (W-2)(H-2)) * sum |L * I| over the valid interior."""
    h, w = plane.shape
    resp = cv2.filter2D(plane.astype(np.float32), cv2.CV_32F, IMMERKAER)[1:-1, 1:-1]
    return float(np.sqrt(np.pi / 2.0) * np.abs(resp.astype(np.float64)).sum() / (6.0 * (w - 2) * (h - 2)))


def estimate_noise_sigma(img: np.ndarray) -> float:
    """Mean over the three channels of the Immerkaer estimate (intensity units)."""
    check_min_size(img, 32)
    return float(np.mean([immerkaer_sigma(img[..., c]) for c in range(3)]))


def robust_sigma(plane: np.ndarray) -> float:
    """Median-absolute version of the Immerkaer estimate; edges and texture barely move it."""
    resp = cv2.filter2D(plane.astype(np.float32), cv2.CV_32F, IMMERKAER)[1:-1, 1:-1]
    return float(np.median(np.abs(resp)) / (0.6745 * 6.0))


def robust_noise_sigma(img: np.ndarray) -> float:
    check_min_size(img, 32)
    return float(np.mean([robust_sigma(img[..., c]) for c in range(3)]))


def blockiness_ratio(luma: np.ndarray) -> float:
    """Mean |gradient| across 8-aligned boundaries over mean |gradient| elsewhere (1.0 when flat)."""
    dx = np.abs(np.diff(luma.astype(np.float64), axis=1))
    dy = np.abs(np.diff(luma.astype(np.float64), axis=0))
    on_x = np.zeros(dx.shape[1], dtype=bool)
    on_x[7::8] = True
    on_y = np.zeros(dy.shape[0], dtype=bool)
    on_y[7::8] = True
    boundary = np.concatenate([dx[:, on_x].ravel(), dy[on_y, :].ravel()]).mean()
    interior = np.concatenate([dx[:, ~on_x].ravel(), dy[~on_y, :].ravel()]).mean()
    if interior < 1e-6:
        return 1.0
    return float(boundary / interior)


def dark_channel(img: np.ndarray, size: int = 15) -> np.ndarray:
    return minimum_filter(img.min(axis=2), size=size, mode="mirror")


def airlight(img: np.ndarray, dark: np.ndarray | None = None) -> np.ndarray:
    """Per-channel mean of the pixels in the brightest 0.1% of the dark channel."""
    if dark is None:
        dark = dark_channel(img)
    flat = dark.ravel()
    n = max(1, int(np.ceil(flat.size * 0.001)))
    idx = np.argpartition(flat, flat.size - n)[-n:]
    return img.reshape(-1, 3)[idx].mean(axis=0)


def haze_stats(img: np.ndarray) -> dict:
    """``dark_floor`` is the 5th percentile of the dark channel of a 3x3-median-filtered copy.

    Global haze lifts every pixel by ``A (1 - t)``, so the low tail of the dark
    channel moves up even on dark scenes; the median keeps noise from pulling it down.
    """
    dark = dark_channel(img)
    a = airlight(img, dark)
    a_mean = float(np.mean(a))
    d = float(dark.mean())
    floor = dark_channel(cv2.medianBlur(np.ascontiguousarray(img, dtype=np.float32), 3))
    return {
        "dark_mean": d,
        "dark_floor": float(np.percentile(floor, 5)),
        "contrast": float(to_luma(img).std()),
        "airlight": a_mean,
        "t_hat": float(np.clip(1.0 - d / max(a_mean, 1e-3), 0.0, 1.0)),
    }


def low_light_stats(img: np.ndarray, dark_level: float = 0.12) -> dict:
    luma = to_luma(img)
    return {"mean_luma": float(luma.mean()), "dark_fraction": float((luma < dark_level).mean())}


def rain_stats(img: np.ndarray, bin_deg: float = 15.0, level: float = 0.04) -> dict:
    """Orientation histogram of residual energy, residual = luma - 5x5 median."""
    luma = to_luma(img)
    med = cv2.medianBlur(luma.astype(np.float32), 5)
    resid = luma - med
    gx = cv2.Sobel(resid, cv2.CV_32F, 1, 0, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    gy = cv2.Sobel(resid, cv2.CV_32F, 0, 1, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    energy = (gx * gx + gy * gy).astype(np.float64)
    # structure orientation is perpendicular to the gradient; image y points down
    grad_angle = np.degrees(np.arctan2(-gy, gx))
    orient = np.mod(grad_angle + 90.0, 180.0)
    nbins = int(round(180.0 / bin_deg))
    hist = np.bincount(np.minimum((orient / bin_deg).astype(int), nbins - 1).ravel(),
                       weights=energy.ravel(), minlength=nbins)
    centers = (np.arange(nbins) + 0.5) * bin_deg
    in_band = (centers >= 60.0) & (centers <= 120.0)
    median_bin = float(np.median(hist))
    band_max = float(hist[in_band].max())
    ratio = band_max / median_bin if median_bin > 1e-12 else (np.inf if band_max > 1e-12 else 0.0)
    angle = float(centers[in_band][int(np.argmax(hist[in_band]))])
    return {
        "ratio": float(ratio),
        "angle": angle,
        "density": float((resid > level).mean()),
        "hist": hist,
    }


def structure_tensor(luma: np.ndarray) -> tuple[float, float, float]:
    """(lambda1, lambda2, orientation of the dominant gradient in degrees, CCW from +x)."""
    gx = cv2.Sobel(luma, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    gy = -cv2.Sobel(luma, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    jxx, jyy, jxy = (gx * gx).sum(), (gy * gy).sum(), (gx * gy).sum()
    tr, det = jxx + jyy, jxx * jyy - jxy * jxy
    disc = np.sqrt(max(tr * tr / 4.0 - det, 0.0))
    l1, l2 = tr / 2.0 + disc, tr / 2.0 - disc
    theta = 0.5 * np.degrees(np.arctan2(2.0 * jxy, jxx - jyy))
    return float(l1), float(max(l2, 0.0)), float(np.mod(theta, 180.0))


def laplacian_variance(luma: np.ndarray) -> float:
    return float(cv2.Laplacian(luma.astype(np.float32), cv2.CV_32F, ksize=1,
                               borderType=cv2.BORDER_REFLECT_101).astype(np.float64).var())


# sum of squared taps of the 4-neighbour Laplacian: white noise of variance s^2 adds 20 s^2
_LAPLACIAN_NOISE_GAIN = 20.0


def compensated_sharpness(luma: np.ndarray) -> float:
    """Laplacian variance minus the part explained by white noise at the robust sigma."""
    sigma = robust_sigma(luma)
    return laplacian_variance(luma) - _LAPLACIAN_NOISE_GAIN * sigma * sigma


def radial_spectrum(luma: np.ndarray, nbins: int = 64) -> np.ndarray:
    """Radially averaged power spectrum over [0, Nyquist] of the Hann-windowed, mean-removed plane."""
    h, w = luma.shape
    win = np.outer(np.hanning(h), np.hanning(w))
    p = (luma - luma.mean()) * win
    power = np.abs(np.fft.fftshift(np.fft.fft2(p))) ** 2
    fy = (np.arange(h) - h // 2) / (h / 2.0)
    fx = (np.arange(w) - w // 2) / (w / 2.0)
    r = np.hypot(fy[:, None], fx[None, :])
    idx = np.minimum((r * nbins).astype(int), nbins)
    sums = np.bincount(idx.ravel(), weights=power.ravel(), minlength=nbins + 1)[:nbins]
    counts = np.bincount(idx.ravel(), minlength=nbins + 1)[:nbins]
    return sums / np.maximum(counts, 1)


def high_frequency_fraction(luma: np.ndarray, cutoff: float = 0.35, nbins: int = 64) -> float:
    """Share of (non-DC) spectral energy above ``cutoff`` * Nyquist."""
    spec = radial_spectrum(luma, nbins)
    radii = (np.arange(nbins) + 0.5) / nbins
    total = spec[1:].sum()
    if total <= 0:
        return 0.0
    return float(spec[radii > cutoff].sum() / total)


def highpass_anisotropy(luma: np.ndarray, sigma: float = 1.0) -> tuple[float, float]:
    """(lambda1 / lambda2, dominant gradient orientation) of the structure tensor of ``luma - G_sigma * luma``.

    Working on the fine-scale residual keeps large oriented content (horizons,
    facades) from dominating; linear motion blur removes fine detail along its
    direction and leaves a strongly anisotropic residual.
    """
    luma = luma.astype(np.float32)
    resid = luma - cv2.GaussianBlur(luma, (0, 0), sigma, borderType=cv2.BORDER_REFLECT_101)
    l1, l2, theta = structure_tensor(resid)
    return (l1 / l2 if l2 > 1e-20 else (np.inf if l1 > 1e-20 else 1.0)), theta


def band_ratio(luma: np.ndarray, nbins: int = 64, noise_sigma: float | None = None) -> float:
    """log10 of spectral energy in (0.5, 0.9) Nyquist over energy in (0.2, 0.4) Nyquist.

    With ``noise_sigma`` the flat white-noise floor is subtracted from every bin first.
    """
    spec = radial_spectrum(luma, nbins)
    if noise_sigma is not None:
        h, w = luma.shape
        floor = noise_sigma ** 2 * (np.hanning(h) ** 2).sum() * (np.hanning(w) ** 2).sum()
        spec = np.maximum(spec - floor, 0.0)
    r = (np.arange(nbins) + 0.5) / nbins
    hi = spec[(r > 0.5) & (r < 0.9)].sum()
    mid = spec[(r > 0.2) & (r < 0.4)].sum()
    if mid <= 1e-30:
        return 0.0
    return float(np.log10(max(hi, 1e-30) / mid))


def estimate_scale(luma: np.ndarray, nbins: int = 64) -> int:
    """Downscale factor in {2, 3, 4} whose cutoff (1/s Nyquist) shows the steepest spectral cliff."""
    spec = np.log10(np.maximum(radial_spectrum(luma, nbins), 1e-30))
    r = (np.arange(nbins) + 0.5) / nbins
    best, best_drop = 2, -np.inf
    for s in (2, 3, 4):
        c = 1.0 / s
        below = spec[(r > c - 0.15) & (r < c - 0.05)].mean()
        above = spec[(r > c + 0.05) & (r < c + 0.15)].mean()
        natural = 2.0 * np.log10((c + 0.1) / (c - 0.1))
        drop = (below - above) - natural
        if drop > best_drop:
            best, best_drop = s, drop
    return best
