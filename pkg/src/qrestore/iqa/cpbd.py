"""Cumulative probability of blur detection (sharpness, higher is sharper)."""

from __future__ import annotations

import logging

import cv2
import numpy as np
from scipy import ndimage

from ..imagecore import check_min_size, to_luma

logger = logging.getLogger(__name__)

BETA = 3.6
JNB_HIGH_CONTRAST = 3.0
JNB_LOW_CONTRAST = 5.0
CONTRAST_SPLIT = 0.2
P_BLUR_THRESHOLD = 0.63
MAX_WALK = 64

# unit steps for the 8 quantised gradient directions (dy, dx)
_DIRS = np.array([(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)])


def edge_map(luma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sobel edges with hysteresis at the 80th/40th percentile of nonzero magnitude."""
    gx = cv2.Sobel(luma, cv2.CV_32F, 1, 0, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    gy = cv2.Sobel(luma, cv2.CV_32F, 0, 1, ksize=3, borderType=cv2.BORDER_REFLECT_101)
    mag = np.hypot(gx, gy)
    active = mag[mag > 1e-3]
    if active.size == 0:
        return np.zeros_like(mag, dtype=bool), gx, gy
    high, low = np.percentile(active, 80), np.percentile(active, 40)
    # inclusive thresholds: on clean synthetic edges every magnitude can equal the percentile
    weak = (mag >= low) & (mag > 1e-3)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[weak & (mag >= high)])] = True
    keep[0] = False
    return keep[labels], gx, gy


def edge_widths(luma: np.ndarray, edges: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Distance between the luminance extrema bracketing each edge pixel, walking along the gradient.

    Returns (widths, contrasts) for the edge pixels in raster order.
    """
    ys, xs = np.nonzero(edges)
    if ys.size == 0:
        return np.zeros(0), np.zeros(0)
    angle = np.arctan2(gy[ys, xs], gx[ys, xs])
    code = np.round(angle / (np.pi / 4)).astype(int) % 8
    step = _DIRS[code]
    step_len = np.where(np.abs(step).sum(axis=1) == 2, np.sqrt(2.0), 1.0)
    pad = MAX_WALK + 1
    padded = np.pad(luma.astype(np.float64), pad, mode="constant", constant_values=np.nan)
    y0, x0 = ys + pad, xs + pad

    def walk(sign: int):
        cy, cx = y0.copy(), x0.copy()
        cur = padded[cy, cx]
        n = np.zeros(ys.size, dtype=int)
        alive = np.ones(ys.size, dtype=bool)
        for _ in range(MAX_WALK):
            ny = cy + sign * step[:, 0]
            nx = cx + sign * step[:, 1]
            nxt = padded[ny, nx]
            moving = alive & ((nxt - cur) * sign > 0)
            cy = np.where(moving, ny, cy)
            cx = np.where(moving, nx, cx)
            cur = np.where(moving, nxt, cur)
            n += moving
            alive = moving
            if not alive.any():
                break
        return n, cur

    n_up, v_max = walk(+1)
    n_down, v_min = walk(-1)
    widths = (n_up + n_down) * step_len
    return widths, v_max - v_min


def cpbd_details(img: np.ndarray) -> tuple[float, int]:
    check_min_size(img, 64)
    luma = to_luma(img)
    edges, gx, gy = edge_map(luma)
    widths, contrast = edge_widths(luma, edges, gx, gy)
    if widths.size == 0:
        return 0.0, 0
    jnb = np.where(contrast > CONTRAST_SPLIT, JNB_HIGH_CONTRAST, JNB_LOW_CONTRAST)
    p_blur = 1.0 - np.exp(-((widths / jnb) ** BETA))
    return float(np.mean(p_blur <= P_BLUR_THRESHOLD)), int(widths.size)


def cpbd_score(img: np.ndarray) -> float:
    """Fraction of edge pixels whose blur would go unnoticed; 0.0 when no edges exist."""
    score, n_edges = cpbd_details(img)
    if n_edges == 0:
        logger.debug("cpbd: no edges found")
    return score
