"""Fit detector thresholds on a labelled synthetic sweep."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from ..degrade import DegradationKind, Recipe, apply_recipe, recipe_rng, recipe_to_label, sample_recipe, sample_step
from ..imagecore import to_luma
from . import stats
from .detectors import DetectorThresholds

logger = logging.getLogger(__name__)

MAX_PRISTINE_FPR = 0.08
# single-degradation recall must clear the acceptance floor by this much on the sweep
RECALL_MARGIN = 0.10


def detector_statistics(img: np.ndarray) -> dict:
    """The scalar each detector thresholds, computed exactly as the detectors do."""
    luma = to_luma(img)
    hz = stats.haze_stats(img)
    ll = stats.low_light_stats(img)
    rn = stats.rain_stats(img)
    aniso, _ = stats.highpass_anisotropy(luma)
    return {
        "sigma": stats.robust_noise_sigma(img),
        "blockiness": stats.blockiness_ratio(luma),
        "dark_floor": hz["dark_floor"],
        "contrast": hz["contrast"],
        "mean_luma": ll["mean_luma"],
        "dark_fraction": ll["dark_fraction"],
        "rain_ratio": min(rn["ratio"], 1e6),
        "rain_density": rn["density"],
        "sharpness": stats.compensated_sharpness(luma),
        "anisotropy": min(aniso, 1e6),
        "band_ratio": stats.band_ratio(luma, noise_sigma=stats.robust_sigma(luma)),
    }


def labelled_sweep(images: list, seed: int, singles: int = 2, multis: int = 4) -> tuple[list, np.ndarray, np.ndarray]:
    """Per image: the pristine copy, ``singles`` single-kind degradations and ``multis`` 2..4-step recipes.

    Returns (images, labels, group) with group 0 = pristine, 1 = single, 2 = multi.
    """
    kinds = list(DegradationKind)
    out, labels, group = [], [], []
    for i, img in enumerate(images):
        rng = recipe_rng(seed, "detectors", i)
        out.append(img)
        labels.append(np.zeros(10, dtype=np.uint8))
        group.append(0)
        for j in range(singles):
            kind = kinds[(i * singles + j) % len(kinds)]
            recipe = Recipe((sample_step(kind, rng),), int(rng.integers(2 ** 62)), f"det{i}_{j}")
            out.append(apply_recipe(img, recipe)[0])
            labels.append(recipe_to_label(recipe))
            group.append(1)
        for j in range(multis):
            recipe = sample_recipe(rng, int(rng.integers(2 ** 62)), f"detm{i}_{j}", count=int(rng.integers(2, 5)))
            out.append(apply_recipe(img, recipe)[0])
            labels.append(recipe_to_label(recipe))
            group.append(2)
    return out, np.stack(labels), np.asarray(group)


def _candidates(values: np.ndarray, n: int = 60) -> np.ndarray:
    return np.unique(np.quantile(values, np.linspace(0.0, 1.0, n)))


def _best_rule(pred_fn, grid, positive: np.ndarray, pristine: np.ndarray,
               single: np.ndarray | None = None, recall_floor: float = 0.0):
    """Grid point with the highest accuracy over the whole sweep.

    Points whose pristine false-positive rate exceeds the cap, or whose recall on
    single-degradation positives falls below ``recall_floor``, are penalised.
    Without ``single`` the objective is balanced accuracy instead.
    """
    best, best_score = None, -np.inf
    single_pos = positive & single if single is not None else None
    for point in grid:
        pred = pred_fn(*point)
        if single is None:
            tpr = pred[positive].mean() if positive.any() else 0.0
            tnr = (~pred[~positive]).mean() if (~positive).any() else 0.0
            score = 0.5 * (tpr + tnr)
        else:
            score = float((pred == positive).mean())
            if single_pos.any() and pred[single_pos].mean() < recall_floor:
                score -= 10.0
        if pristine.any() and pred[pristine].mean() > MAX_PRISTINE_FPR:
            score -= 10.0
        if score > best_score + 1e-12:
            best, best_score = point, score
    return best


def calibrate_detectors(images: list, seed: int = 0, base: DetectorThresholds | None = None) -> DetectorThresholds:
    """Fit every threshold except the noise-severity boundaries on a labelled sweep of ``images``."""
    th = base or DetectorThresholds()
    sweep, labels, group = labelled_sweep(images, seed)
    st = [detector_statistics(img) for img in sweep]
    col = {k: np.array([s[k] for s in st]) for k in st[0]}
    lab = labels.astype(bool)
    pristine = group == 0
    single = group == 1

    def fit(pred_fn, grid, positive, floor):
        return _best_rule(pred_fn, grid, positive, pristine, single, floor + RECALL_MARGIN)

    (noise_present,) = fit(lambda t: col["sigma"] >= t, [(t,) for t in _candidates(col["sigma"])],
                           lab[:, :3].any(axis=1), 0.70)
    (jpeg,) = fit(lambda t: col["blockiness"] >= t, [(t,) for t in _candidates(col["blockiness"])],
                  lab[:, 3], 0.85)
    rain_grid = [(r, d) for r in _candidates(col["rain_ratio"], 40) for d in _candidates(col["rain_density"], 15)]
    rain_ratio, rain_low = fit(
        lambda r, d: (col["rain_ratio"] >= r) & (col["rain_density"] >= d) & (col["rain_density"] <= th.rain_density_high),
        rain_grid, lab[:, 4], 0.70)
    haze_grid = [(d, c) for d in _candidates(col["dark_floor"], 40) for c in _candidates(col["contrast"], 30)]
    haze_dark, haze_contrast = fit(lambda d, c: (col["dark_floor"] >= d) & (col["contrast"] <= c), haze_grid,
                                   lab[:, 5], 0.85)
    ll_grid = [(m, f) for m in _candidates(col["mean_luma"], 40) for f in _candidates(col["dark_fraction"], 30)]
    ll_mean, ll_frac = fit(lambda m, f: (col["mean_luma"] <= m) & (col["dark_fraction"] >= f), ll_grid,
                           lab[:, 8], 0.85)
    (sharp,) = fit(lambda t: col["sharpness"] <= t, [(t,) for t in _candidates(col["sharpness"])],
                   lab[:, 6:8].any(axis=1), 0.70)
    # motion vs defocus, among images carrying exactly one blur kind
    one_blur = lab[:, 6] != lab[:, 7]
    aniso_vals = col["anisotropy"][one_blur]
    (aniso,) = _best_rule(lambda t: aniso_vals >= t, [(t,) for t in _candidates(aniso_vals)],
                          lab[one_blur, 6], np.zeros(one_blur.sum(), dtype=bool))
    (low_res,) = fit(lambda t: col["band_ratio"] <= t, [(t,) for t in _candidates(col["band_ratio"])],
                     lab[:, 9], 0.70)

    out = replace(th, noise_present=float(noise_present), jpeg_blockiness=float(jpeg), rain_ratio=float(rain_ratio),
                  rain_density_low=float(rain_low), haze_dark=float(haze_dark), haze_contrast=float(haze_contrast),
                  low_light_mean=float(ll_mean), low_light_fraction=float(ll_frac), blur_sharpness=float(sharp),
                  blur_anisotropy=float(aniso), low_res_band=float(low_res))
    logger.info("calibrated detector thresholds: %s", out)
    return out
