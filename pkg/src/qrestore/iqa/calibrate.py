"""Fit the pristine NSS model, the distortion regressor and the normalisation tables."""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from ..degrade import DegradationKind, DegradationStep, apply_recipe, apply_step, recipe_rng, sample_recipe
from ..imagecore import quantize, to_luma
from .brisque import RidgeRegressor, brisque_score, fit_ridge
from .cpbd import cpbd_score
from .nss import CorpusTooSmall, NaturalnessModel, fit_feature_model, mscn, niqe_score, nss_features, patch_features
from .proxies import (_tiles, anomaly_level, clarity_components, clarity_proxy, local_distortion_proxy,
                      tile_kurtosis)

logger = logging.getLogger(__name__)

MIN_CORPUS = 50
SHARP_FRACTION = 0.5

# three increasing severities per kind, used to train the distortion index
SEVERITY_LADDER = {
    DegradationKind.NOISE: [{"sigma": s / 255} for s in (10, 25, 50)],
    DegradationKind.DEFOCUS_BLUR: [{"radius": r} for r in (2.0, 4.0, 6.0)],
    DegradationKind.MOTION_BLUR: [{"length": n, "angle": 0.0} for n in (9, 15, 21)],
    DegradationKind.JPEG: [{"quality": q} for q in (40, 20, 10)],
    DegradationKind.LOW_RES: [{"scale": s} for s in (2, 3, 4)],
}


def _digest(images) -> str:
    h = hashlib.sha256()
    for img in images:
        h.update(quantize(img).tobytes())
    return h.hexdigest()


def _canonical_order(images: list) -> list:
    """Content-keyed order so the fit does not depend on how the corpus was listed."""
    keyed = sorted((hashlib.sha256(quantize(img).tobytes()).hexdigest(), i) for i, img in enumerate(images))
    return [images[i] for _, i in keyed]


def severity_sweep(images: list, seed: int) -> tuple[list, np.ndarray]:
    """Pristine images at level 0 plus one seeded kind per image at levels 1..3."""
    out, levels = [], []
    kinds = list(SEVERITY_LADDER)
    for i, img in enumerate(images):
        rng = recipe_rng(seed, "severity", i)
        out.append(img)
        levels.append(0)
        kind = kinds[i % len(kinds)]
        angle = float(rng.uniform(0, 180))
        for level, params in enumerate(SEVERITY_LADDER[kind], start=1):
            params = dict(params)
            if kind is DegradationKind.MOTION_BLUR:
                params["angle"] = angle
            sev = ("low", "mid", "high")[level - 1] if kind is DegradationKind.NOISE else "mid"
            out.append(apply_step(img, DegradationStep(kind, params, sev), rng))
            levels.append(level)
    return out, np.asarray(levels)


def fit_distortion_regressor(images: list, seed: int = 0, alpha: float = 1.0) -> RidgeRegressor:
    sweep, levels = severity_sweep(images, seed)
    feats = np.stack([nss_features(img) for img in sweep])
    return fit_ridge(feats, levels * 100.0 / 3.0, alpha)


def calibration_sweep(images: list, seed: int) -> list:
    """Pristine images plus seeded random 1..4-step degradations of each."""
    out = list(images)
    for i, img in enumerate(images):
        rng = recipe_rng(seed, "calibration", i)
        recipe = sample_recipe(rng, int(rng.integers(2 ** 62)), f"cal{i}")
        out.append(apply_recipe(img, recipe)[0])
    return out


def _p1_p99(values) -> list:
    v = np.asarray(values, dtype=np.float64)
    return [float(np.percentile(v, 1)), float(np.percentile(v, 99))]


def calibrate_iqa(images: list, seed: int = 0) -> tuple[NaturalnessModel, RidgeRegressor]:
    if len(images) < MIN_CORPUS:
        raise CorpusTooSmall(f"need at least {MIN_CORPUS} pristine images, got {len(images)}")
    images = _canonical_order(list(images))
    rows = np.concatenate([patch_features(img, SHARP_FRACTION) for img in images])
    model = fit_feature_model(rows, fitted_on=_digest(images))
    kurt = np.concatenate([tile_kurtosis(_tiles(mscn(to_luma(img)))) for img in images])
    model.reference_stats = {"mscn_kurtosis": float(np.median(kurt))}
    regressor = fit_distortion_regressor(images, seed)

    sweep = calibration_sweep(images, seed)
    comps = [clarity_components(img) for img in sweep]
    table = {k: _p1_p99([c[k] for c in comps]) for k in ("colorfulness", "rms_contrast", "entropy")}
    kref = model.reference_stats["mscn_kurtosis"]
    table["anomaly"] = _p1_p99([anomaly_level(img, kref) for img in sweep])
    raw = {"ni": [], "br": [], "cp": [], "cl": [], "hy": []}
    for img in sweep:
        raw["ni"].append(niqe_score(img, model))
        raw["br"].append(brisque_score(img, regressor))
        raw["cp"].append(cpbd_score(img))
        raw["cl"].append(clarity_proxy(img, table))
        raw["hy"].append(local_distortion_proxy(img, table, kref))
    for k, v in raw.items():
        table[k] = _p1_p99(v)
    model.percentile_table = table
    logger.info("calibrated iqa on %d images (%d patches)", len(images), rows.shape[0])
    return model, regressor
