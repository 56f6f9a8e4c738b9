"""Natural scene statistics: MSCN coefficients, GGD/AGGD moment fits, NSS features, NIQE."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.special import gamma as gamma_fn

from ..imagecore import check_min_size, gaussian_kernel, to_luma

MSCN_C = 1.0 / 255.0
MSCN_KERNEL = gaussian_kernel(7, 7.0 / 6.0)
PATCH = 96
PATCH_STRIDE = 32
N_FEATURES = 36

_ALPHAS = np.arange(0.2, 10.0 + 1e-9, 0.001)
# E[x^2] / E[|x|]^2 for a GGD of shape alpha; strictly decreasing in alpha
_GGD_RATIO = gamma_fn(1.0 / _ALPHAS) * gamma_fn(3.0 / _ALPHAS) / gamma_fn(2.0 / _ALPHAS) ** 2
_ALPHA_DEGENERATE = float(_ALPHAS[-1])


class CorpusTooSmall(ValueError):
    pass


def _local_moments(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # float64: E[x^2] - mu^2 cancels badly in float32 on flat regions
    p = plane.astype(np.float64)
    k = MSCN_KERNEL.astype(np.float64)
    k /= k.sum()
    mu = cv2.filter2D(p, cv2.CV_64F, k, borderType=cv2.BORDER_REFLECT_101)
    sq = cv2.filter2D(p * p, cv2.CV_64F, k, borderType=cv2.BORDER_REFLECT_101)
    sigma = np.sqrt(np.abs(sq - mu * mu))
    return mu, sigma


def mscn(plane: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalised coefficients of a 2-D plane."""
    plane = np.asarray(plane, dtype=np.float32)
    check_min_size(plane, 16)
    mu, sigma = _local_moments(plane)
    return ((plane - mu) / (sigma + MSCN_C)).astype(np.float32)


def _ratio_to_alpha(ratio: np.ndarray) -> np.ndarray:
    # _GGD_RATIO is decreasing, so search on the reversed table
    rev = _GGD_RATIO[::-1]
    idx = np.searchsorted(rev, ratio)
    idx = np.clip(idx, 1, len(rev) - 1)
    lower, upper = rev[idx - 1], rev[idx]
    pick = np.where(np.abs(ratio - lower) <= np.abs(upper - ratio), idx - 1, idx)
    return _ALPHAS[::-1][pick]


def fit_ggd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matching GGD fit along the last axis -> (alpha, sigma^2)."""
    x = np.asarray(x, dtype=np.float64)
    sigma2 = np.mean(x * x, axis=-1)
    e_abs = np.mean(np.abs(x), axis=-1)
    degenerate = e_abs <= 1e-12
    ratio = sigma2 / np.where(degenerate, 1.0, e_abs ** 2)
    alpha = np.where(degenerate, _ALPHA_DEGENERATE, _ratio_to_alpha(ratio))
    return alpha, sigma2


def fit_aggd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Moment-matching AGGD fit along the last axis -> (alpha, mean, sigma_l^2, sigma_r^2)."""
    x = np.asarray(x, dtype=np.float64)
    neg, pos = x < 0, x > 0
    n_neg, n_pos = neg.sum(axis=-1), pos.sum(axis=-1)
    sl2 = np.where(n_neg > 0, np.sum(np.where(neg, x * x, 0.0), axis=-1) / np.maximum(n_neg, 1), 0.0)
    sr2 = np.where(n_pos > 0, np.sum(np.where(pos, x * x, 0.0), axis=-1) / np.maximum(n_pos, 1), 0.0)
    sl, sr = np.sqrt(sl2), np.sqrt(sr2)
    e_abs = np.mean(np.abs(x), axis=-1)
    e_sq = np.mean(x * x, axis=-1)
    degenerate = (sl <= 1e-12) | (sr <= 1e-12) | (e_abs <= 1e-12)
    g = sl / np.where(degenerate, 1.0, sr)
    r_hat = e_sq / np.where(degenerate, 1.0, e_abs ** 2)
    # GGD_RATIO is the reciprocal of the usual r(alpha); normalise r_hat the same way
    r_norm = r_hat * (g * g + 1.0) ** 2 / ((g ** 3 + 1.0) * (g + 1.0))
    alpha = np.where(degenerate, _ALPHA_DEGENERATE, _ratio_to_alpha(r_norm))
    beta_scale = np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha))
    mean = (sr - sl) * beta_scale * gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha)
    mean = np.where(degenerate, 0.0, mean)
    return alpha, mean, sl2, sr2


def _pair_products(blocks: np.ndarray) -> list[np.ndarray]:
    n = blocks.shape[0]
    h = blocks[:, :, :-1] * blocks[:, :, 1:]
    v = blocks[:, :-1, :] * blocks[:, 1:, :]
    d1 = blocks[:, :-1, :-1] * blocks[:, 1:, 1:]
    d2 = blocks[:, :-1, 1:] * blocks[:, 1:, :-1]
    return [p.reshape(n, -1) for p in (h, v, d1, d2)]


def _block_features(blocks: np.ndarray) -> np.ndarray:
    """18 features for each MSCN block in an ``(n, h, w)`` stack."""
    n = blocks.shape[0]
    alpha, sigma2 = fit_ggd(blocks.reshape(n, -1))
    cols = [alpha, sigma2]
    for prod in _pair_products(blocks):
        cols.extend(fit_aggd(prod))
    return np.stack(cols, axis=1)


def _half(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return cv2.resize(plane, (w // 2, h // 2), interpolation=cv2.INTER_AREA)


def nss_features(img: np.ndarray) -> np.ndarray:
    """36-vector of whole-image NSS features at full and half scale."""
    check_min_size(img, 32)
    luma = to_luma(img)
    feats = []
    for plane in (luma, _half(luma)):
        feats.append(_block_features(mscn(plane)[None])[0])
    return np.concatenate(feats)


def _grid(length: int, size: int, stride: int) -> list[int]:
    if length <= size:
        return [0]
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return starts


def patch_features(img: np.ndarray, sharp_fraction: float | None = None) -> np.ndarray:
    """Per-patch 36-D features on a 96-px grid (stride 32); half scale uses co-located 48-px patches.

    With ``sharp_fraction`` set, only the patches with the highest mean local
    deviation are kept (at least 4, or all when fewer exist).
    """
    check_min_size(img, 32)
    luma = to_luma(img)
    size = min(PATCH, luma.shape[0] // 2 * 2, luma.shape[1] // 2 * 2)
    stride = PATCH_STRIDE if size == PATCH else size
    ys = _grid(luma.shape[0], size, stride)
    xs = _grid(luma.shape[1], size, stride)
    ys = [y - y % 2 for y in ys]
    xs = [x - x % 2 for x in xs]
    full = mscn(luma)
    _, sigma = _local_moments(luma)
    half = mscn(_half(luma))
    pos = [(y, x) for y in ys for x in xs]
    blocks_full = np.stack([full[y:y + size, x:x + size] for y, x in pos])
    hs = size // 2
    blocks_half = np.stack([half[y // 2:y // 2 + hs, x // 2:x // 2 + hs] for y, x in pos])
    feats = np.concatenate([_block_features(blocks_full), _block_features(blocks_half)], axis=1)
    if sharp_fraction is not None:
        sharpness = np.array([sigma[y:y + size, x:x + size].mean() for y, x in pos])
        keep = max(4, int(np.ceil(sharp_fraction * len(pos))))
        if keep < len(pos):
            order = np.argsort(-sharpness, kind="stable")[:keep]
            feats = feats[np.sort(order)]
    return feats


@dataclass
class NaturalnessModel:
    feature_mean: np.ndarray
    feature_cov: np.ndarray
    fitted_on: str = ""
    percentile_table: dict = field(default_factory=dict)
    reference_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_cov = np.asarray(self.feature_cov, dtype=np.float64)

    def validate(self) -> None:
        cov = self.feature_cov
        if cov.shape != (N_FEATURES, N_FEATURES) or self.feature_mean.shape != (N_FEATURES,):
            raise ValueError("naturalness model has wrong dimensions")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("feature covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-8 * max(1.0, np.trace(cov)):
            raise ValueError("feature covariance is not PSD")


def regularize(cov: np.ndarray) -> np.ndarray:
    eps = 1e-6 * np.trace(cov) / cov.shape[0]
    return cov + eps * np.eye(cov.shape[0])


def fit_feature_model(feature_rows: np.ndarray, fitted_on: str = "") -> NaturalnessModel:
    feature_rows = np.asarray(feature_rows, dtype=np.float64)
    mean = feature_rows.mean(axis=0)
    cov = np.cov(feature_rows, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    return NaturalnessModel(mean, cov, fitted_on)


def mahalanobis_distance(mu1, cov1, mu2, cov2) -> float:
    d = np.asarray(mu1, dtype=np.float64) - np.asarray(mu2, dtype=np.float64)
    pooled = regularize((np.asarray(cov1) + np.asarray(cov2)) / 2.0)
    return float(np.sqrt(max(0.0, d @ np.linalg.solve(pooled, d))))


def niqe_score(img: np.ndarray, model: NaturalnessModel) -> float:
    """Distance between the image's patch statistics and the pristine model; higher is worse."""
    feats = patch_features(img)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros((N_FEATURES, N_FEATURES))
    return mahalanobis_distance(mu, cov, model.feature_mean, model.feature_cov)
