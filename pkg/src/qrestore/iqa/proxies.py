"""Classical stand-ins for the learned semantic and local-distortion quality slots."""

from __future__ import annotations

import numpy as np

from ..imagecore import check_min_size, to_luma
from .nss import mscn


class ModelMissing(RuntimeError):
    pass


def normalize(value: float, table: dict, key: str) -> float:
    """clamp((x - p1) / (p99 - p1), 0, 1) using the stored percentile pair."""
    if key not in table:
        raise ModelMissing(f"percentile table has no entry {key!r}")
    p1, p99 = table[key]
    span = p99 - p1
    if span <= 0:
        return 1.0 if value > p1 else 0.0
    return float(min(1.0, max(0.0, (value - p1) / span)))


# -- global appearance -------------------------------------------------------

def colorfulness(img: np.ndarray) -> float:
    """Hasler-Suesstrunk colourfulness on [0, 1] RGB."""
    r, g, b = (img[..., c].astype(np.float64) for c in range(3))
    rg = r - g
    yb = 0.5 * (r + g) - b
    return float(np.hypot(rg.std(), yb.std()) + 0.3 * np.hypot(rg.mean(), yb.mean()))


def rms_contrast(img: np.ndarray) -> float:
    return float(to_luma(img).astype(np.float64).std())


def luma_entropy(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin luma histogram."""
    q = np.clip(np.floor(to_luma(img) * 255.0 + 0.5), 0, 255).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = hist[hist > 0] / hist.sum()
    return float(-(p * np.log2(p)).sum())


def clarity_components(img: np.ndarray) -> dict:
    return {"colorfulness": colorfulness(img), "rms_contrast": rms_contrast(img), "entropy": luma_entropy(img)}


def clarity_proxy(img: np.ndarray, table: dict) -> float:
    c = clarity_components(img)
    return (0.4 * normalize(c["colorfulness"], table, "colorfulness")
            + 0.3 * normalize(c["rms_contrast"], table, "rms_contrast")
            + 0.3 * normalize(c["entropy"], table, "entropy"))


# -- local distortions -------------------------------------------------------

TILE = 32


def _tiles(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    nh, nw = h // TILE, w // TILE
    t = plane[:nh * TILE, :nw * TILE].reshape(nh, TILE, nw, TILE).swapaxes(1, 2)
    return t.reshape(nh * nw, TILE, TILE)


def tile_blockiness(tiles: np.ndarray) -> np.ndarray:
    """max(0, B - 1) per tile, B = boundary / interior mean abs difference on the 8-px grid."""
    dx = np.abs(np.diff(tiles, axis=2))  # column j holds |x[j+1] - x[j]|
    dy = np.abs(np.diff(tiles, axis=1))
    on = np.zeros(TILE - 1, dtype=bool)
    on[7::8] = True
    boundary = (dx[:, :, on].mean(axis=(1, 2)) + dy[:, on, :].mean(axis=(1, 2))) / 2.0
    interior = (dx[:, :, ~on].mean(axis=(1, 2)) + dy[:, ~on, :].mean(axis=(1, 2))) / 2.0
    ratio = np.where(interior > 1e-4, boundary / np.maximum(interior, 1e-4), 1.0)
    return np.maximum(0.0, ratio - 1.0)


def tile_kurtosis(tiles: np.ndarray) -> np.ndarray:
    flat = tiles.reshape(tiles.shape[0], -1).astype(np.float64)
    c = flat - flat.mean(axis=1, keepdims=True)
    var = (c ** 2).mean(axis=1)
    return np.where(var > 1e-8, (c ** 4).mean(axis=1) / np.maximum(var, 1e-8) ** 2, 3.0)


def tile_anomalies(img: np.ndarray, kurtosis_ref: float) -> np.ndarray:
    check_min_size(img, 64)
    luma = to_luma(img)
    block = tile_blockiness(_tiles(luma))
    kurt = tile_kurtosis(_tiles(mscn(luma)))
    deviation = np.abs(kurt - kurtosis_ref) / kurtosis_ref
    return np.maximum(block, deviation)


def anomaly_level(img: np.ndarray, kurtosis_ref: float) -> float:
    """Mean of the top quarter of per-tile anomalies."""
    a = np.sort(tile_anomalies(img, kurtosis_ref))[::-1]
    k = max(1, int(np.ceil(0.25 * a.size)))
    return float(a[:k].mean())


def local_distortion_proxy(img: np.ndarray, table: dict, kurtosis_ref: float) -> float:
    return 1.0 - normalize(anomaly_level(img, kurtosis_ref), table, "anomaly")
