"""Independent per-degradation detectors and the 10-bit perception vector.

Each detector answers one yes/no question from the image alone; the noise
detector also answers the low/medium/high intensity follow-up. Thresholds use
a closed rule on the positive side: a statistic exactly at its threshold counts
as present.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..degrade import LABEL_NAMES
from ..imagecore import check_min_size, to_luma
from . import stats


@dataclass
class DetectorThresholds:
    """Shipped fallbacks (rounded from a pilot calibration); the calibration artifact overrides them."""

    noise_present: float = 8 / 255
    noise_mid: float = 17.5 / 255
    noise_high: float = 37.5 / 255
    jpeg_blockiness: float = 1.10
    haze_dark: float = 0.22
    haze_contrast: float = 0.21
    low_light_mean: float = 0.30
    low_light_fraction: float = 0.08
    rain_ratio: float = 2.9
    rain_density_low: float = 0.10
    rain_density_high: float = 0.5
    blur_sharpness: float = 1.3e-3
    blur_anisotropy: float = 3.4
    low_res_band: float = -1.77

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DetectorThresholds":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown detector thresholds: {sorted(unknown)}")
        return cls(**d)


def _margin_confidence(value: float, threshold: float, scale: float) -> float:
    """Logistic in the distance to the threshold, mapped to [0.5, 1]."""
    if not math.isfinite(value):
        return 1.0
    z = abs(value - threshold) / scale
    return float(1.0 / (1.0 + math.exp(-z)) if z < 50 else 1.0)


@dataclass(frozen=True)
class Detection:
    present: bool
    confidence: float
    estimate: dict

    def to_json(self) -> dict:
        return {"present": self.present, "confidence": self.confidence,
                "estimate": {k: v for k, v in self.estimate.items()}}


def detect_noise(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    sigma = stats.robust_noise_sigma(img)
    present = sigma >= th.noise_present
    if sigma >= th.noise_high:
        severity = "high"
    elif sigma >= th.noise_mid:
        severity = "mid"
    else:
        severity = "low"
    nearest = min((th.noise_present, th.noise_mid, th.noise_high), key=lambda t: abs(sigma - t))
    conf = _margin_confidence(sigma, nearest, 2.0 / 255)
    return Detection(present, conf, {"sigma": sigma, "severity": severity if present else None})


def detect_jpeg(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    b = stats.blockiness_ratio(to_luma(img))
    return Detection(b >= th.jpeg_blockiness, _margin_confidence(b, th.jpeg_blockiness, 0.05),
                     {"blockiness": b})


def detect_haze(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    s = stats.haze_stats(img)
    present = s["dark_floor"] >= th.haze_dark and s["contrast"] <= th.haze_contrast
    conf = min(_margin_confidence(s["dark_floor"], th.haze_dark, 0.05),
               _margin_confidence(s["contrast"], th.haze_contrast, 0.03))
    if s["contrast"] < 1e-3:
        # no structure at all: a flat bright field is indistinguishable from dense haze
        conf = min(conf, 0.5)
    return Detection(present, conf, {"t": s["t_hat"], "airlight": s["airlight"], "dark_mean": s["dark_mean"],
                                     "dark_floor": s["dark_floor"], "contrast": s["contrast"]})


def detect_low_light(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    s = stats.low_light_stats(img)
    present = s["mean_luma"] <= th.low_light_mean and s["dark_fraction"] >= th.low_light_fraction
    conf = min(_margin_confidence(s["mean_luma"], th.low_light_mean, 0.01),
               _margin_confidence(s["dark_fraction"], th.low_light_fraction, 0.02))
    return Detection(present, conf, dict(s))


def detect_rain(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    s = stats.rain_stats(img)
    dens_ok = th.rain_density_low <= s["density"] <= th.rain_density_high
    present = s["ratio"] >= th.rain_ratio and dens_ok
    conf = _margin_confidence(s["ratio"], th.rain_ratio, 0.5)
    if not dens_ok:
        conf = max(conf, 0.75)
    return Detection(present, conf, {"angle": s["angle"], "ratio": s["ratio"], "density": s["density"]})


def detect_blur(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    """``estimate['kind']`` is None, 'motion' or 'defocus'; present means either blur."""
    th = th or DetectorThresholds()
    luma = to_luma(img)
    sharp = stats.compensated_sharpness(luma)
    aniso, grad_theta = stats.highpass_anisotropy(luma)
    blurred = sharp <= th.blur_sharpness
    kind = None
    if blurred:
        kind = "motion" if aniso >= th.blur_anisotropy else "defocus"
    conf = _margin_confidence(sharp, th.blur_sharpness, 0.3 * abs(th.blur_sharpness) + 1e-6)
    if blurred:
        conf = min(conf, _margin_confidence(aniso, th.blur_anisotropy, 0.5))
    angle = float(np.mod(grad_theta + 90.0, 180.0))
    return Detection(blurred, conf, {"kind": kind, "sharpness": sharp, "anisotropy": aniso, "angle": angle})


def detect_low_res(img: np.ndarray, th: DetectorThresholds | None = None) -> Detection:
    th = th or DetectorThresholds()
    luma = to_luma(img)
    b = stats.band_ratio(luma, noise_sigma=stats.robust_sigma(luma))
    present = b <= th.low_res_band
    return Detection(present, _margin_confidence(b, th.low_res_band, 0.15),
                     {"band_ratio": b, "scale": stats.estimate_scale(luma) if present else None})


DETECTORS = {
    "noise": detect_noise,
    "jpeg": detect_jpeg,
    "rain": detect_rain,
    "haze": detect_haze,
    "blur": detect_blur,
    "low_light": detect_low_light,
    "low_res": detect_low_res,
}


@dataclass
class DetectorReport:
    detections: dict

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in self.detections.items()}


def vector_from_detections(det: dict) -> np.ndarray:
    bits = np.zeros(len(LABEL_NAMES), dtype=np.uint8)
    noise = det["noise"]
    if noise.present:
        bits[("low", "mid", "high").index(noise.estimate["severity"])] = 1
    bits[3] = det["jpeg"].present
    bits[4] = det["rain"].present
    bits[5] = det["haze"].present
    blur_kind = det["blur"].estimate["kind"]
    bits[6] = blur_kind == "motion"
    bits[7] = blur_kind == "defocus"
    bits[8] = det["low_light"].present
    bits[9] = det["low_res"].present
    return bits


def perceive(img: np.ndarray, th: DetectorThresholds | None = None, order=None) -> tuple[np.ndarray, DetectorReport]:
    """Run every detector on the image independently and assemble the perception vector.

    ``order`` only changes the evaluation order (used to check independence).
    """
    check_min_size(img, 32)
    th = th or DetectorThresholds()
    names = list(DETECTORS) if order is None else list(order)
    det = {name: DETECTORS[name](img, th) for name in names}
    det = {name: det[name] for name in DETECTORS}
    return vector_from_detections(det), DetectorReport(det)


@dataclass
class InternalPerceiver:
    """Callable ``(img, image_ref) -> (vector, report)`` over the internal detectors."""

    thresholds: DetectorThresholds | None = None

    def __call__(self, img: np.ndarray, image_ref=None) -> tuple[np.ndarray, DetectorReport]:
        return perceive(img, self.thresholds)
