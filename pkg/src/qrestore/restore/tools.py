"""Classical restoration operators, one or more per restoration task, and the tool registry."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import cv2
import numpy as np
from scipy.ndimage import grey_opening
from skimage.restoration import denoise_nl_means

from ..degrade import NOISE_SIGMAS, ParamOutOfRange, disk_kernel, motion_kernel
from ..imagecore import as_image, quantize, resize, to_luma
from ..perceive import stats
from .deblur import estimate_defocus_radius, NSR_GRID, estimate_motion_kernel, wiener_deconvolve

logger = logging.getLogger(__name__)

Probe = Callable[[np.ndarray], float]


class UnknownTool(KeyError):
    pass


class TaskLabel(str, Enum):
    DN_L = "DN_L"
    DN_M = "DN_M"
    DN_H = "DN_H"
    DJ = "DJ"
    DR = "DR"
    DH = "DH"
    MDB = "MDB"
    DDB = "DDB"
    LE = "LE"
    SR = "SR"


# perception bit index -> restoration task
BIT_TO_TASK = (TaskLabel.DN_L, TaskLabel.DN_M, TaskLabel.DN_H, TaskLabel.DJ, TaskLabel.DR, TaskLabel.DH,
               TaskLabel.MDB, TaskLabel.DDB, TaskLabel.LE, TaskLabel.SR)


def tasks_from_vector(bits) -> list[TaskLabel]:
    return [BIT_TO_TASK[i] for i, b in enumerate(np.asarray(bits).ravel()) if b]


@dataclass(frozen=True)
class ToolSpec:
    task: TaskLabel
    tool_id: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def to_json(self) -> dict:
        return {"task": self.task.value, "tool_id": self.tool_id, "params": dict(self.params)}

    @classmethod
    def from_json(cls, d: dict) -> "ToolSpec":
        return cls(TaskLabel(d["task"]), str(d["tool_id"]), dict(d.get("params", {})))

    def sort_key(self) -> tuple:
        return (self.task.value, self.tool_id)


# -- denoising -------------------------------------------------------------

def nlm_denoise(img: np.ndarray, sigma: float, h_factor: float = 0.7) -> np.ndarray:
    """Non-local means, 5x5 patches over an 11x11 search window."""
    out = denoise_nl_means(img, patch_size=5, patch_distance=5, h=h_factor * sigma, sigma=sigma,
                           fast_mode=True, channel_axis=-1)
    return as_image(out)


def bilateral_denoise(img: np.ndarray, sigma: float, sigma_space: float = 3.0) -> np.ndarray:
    return as_image(cv2.bilateralFilter(as_image(img), -1, 2.0 * sigma, sigma_space))


# -- JPEG deblocking ---------------------------------------------------------

def _deblock_axis(plane: np.ndarray, gate: float) -> np.ndarray:
    """Smooth across vertical 8-px block boundaries (columns 7|8, 15|16, ...).

    A boundary position is filtered when its step exceeds ``gate`` times the
    mean of the neighbouring in-block steps yet stays small enough to be an
    artifact rather than a real edge.
    """
    out = plane.copy()
    w = plane.shape[1]
    for b in range(8, w - 1, 8):
        p1, p0, q0, q1 = plane[:, b - 2], plane[:, b - 1], plane[:, b], plane[:, b + 1]
        step = np.abs(q0 - p0)
        inner = 0.5 * (np.abs(p1 - p0) + np.abs(q1 - q0)) + 1e-4
        mask = (step > gate * inner) & (step < 0.12)
        delta = (q0 - p0) * mask
        out[:, b - 2] = p1 + delta / 8.0
        out[:, b - 1] = p0 + 3.0 * delta / 8.0
        out[:, b] = q0 - 3.0 * delta / 8.0
        out[:, b + 1] = q1 - delta / 8.0
    return out


def deblock(img: np.ndarray, gate: float = 1.0, nlm_h: float = 8.0 / 255.0) -> np.ndarray:
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(3):
        p = _deblock_axis(img[..., c], gate)
        p = _deblock_axis(p.T.copy(), gate).T
        out[..., c] = p
    out = as_image(out)
    return as_image(denoise_nl_means(out, patch_size=5, patch_distance=5, h=nlm_h, fast_mode=True,
                                     channel_axis=-1))


# -- rain --------------------------------------------------------------------

def _line_offsets(length: int, angle: float) -> list[tuple[float, float]]:
    theta = np.deg2rad(angle)
    dx, dy = math.cos(theta), -math.sin(theta)
    half = (length - 1) / 2.0
    return [(t * dx, t * dy) for t in np.linspace(-half, half, length)]


def _shift(plane: np.ndarray, dx: float, dy: float) -> np.ndarray:
    m = np.float32([[1, 0, dx], [0, 1, dy]])
    return cv2.warpAffine(plane, m, (plane.shape[1], plane.shape[0]), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_REFLECT_101)


def directional_median(plane: np.ndarray, length: int, angle: float) -> np.ndarray:
    stack = np.stack([_shift(plane, dx, dy) for dx, dy in _line_offsets(length, angle)])
    return np.median(stack, axis=0)


def _streak_residual(img: np.ndarray) -> tuple[np.ndarray, float]:
    luma = to_luma(img).astype(np.float32)
    resid = luma - cv2.medianBlur(luma, 5)
    angle = stats.rain_stats(img)["angle"]
    return np.maximum(resid, 0.0), angle


def derain_median(img: np.ndarray, length: int = 9, angle: float | None = None) -> np.ndarray:
    """Subtract the bright residual that persists along the streak direction."""
    img = as_image(img)
    resid, est = _streak_residual(img)
    angle = est if angle is None else angle
    streak = np.maximum(directional_median(resid, length, angle), 0.0)
    return as_image(img - streak[:, :, None])


def _line_footprint(length: int, angle: float) -> np.ndarray:
    size = length | 1
    fp = np.zeros((size, size), dtype=np.uint8)
    c = size // 2
    for dx, dy in _line_offsets(length, angle):
        fp[int(round(c + dy)), int(round(c + dx))] = 1
    return fp.astype(bool)


def derain_opening(img: np.ndarray, length: int = 9, angle: float | None = None) -> np.ndarray:
    """Morphological opening of the bright residual with a line along the streaks."""
    img = as_image(img)
    resid, est = _streak_residual(img)
    angle = est if angle is None else angle
    streak = grey_opening(resid, footprint=_line_footprint(length, angle), mode="mirror")
    return as_image(img - streak[:, :, None])


# -- haze --------------------------------------------------------------------

def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Grey-guide guided filter built from box means."""
    ksize = (2 * radius + 1, 2 * radius + 1)

    def box(x):
        return cv2.boxFilter(x, cv2.CV_64F, ksize, borderType=cv2.BORDER_REFLECT_101)

    guide = guide.astype(np.float64)
    src = src.astype(np.float64)
    mean_i, mean_p = box(guide), box(src)
    cov_ip = box(guide * src) - mean_i * mean_p
    var_i = box(guide * guide) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box(a) * guide + box(b)


def dehaze_dark_channel(img: np.ndarray, omega: float = 0.95, t_floor: float = 0.1, radius: int = 20,
                        eps: float = 1e-3, t: float | None = None, airlight=None) -> np.ndarray:
    """Dark channel prior dehazing; ``t`` / ``airlight`` override the estimates when known."""
    img = as_image(img)
    a = stats.airlight(img) if airlight is None else np.broadcast_to(np.asarray(airlight, np.float64), (3,))
    a = np.maximum(np.asarray(a, dtype=np.float64), 1e-3)
    if t is None:
        norm = (img / a[None, None, :]).astype(np.float32)
        t_map = 1.0 - omega * stats.dark_channel(norm)
        t_map = guided_filter(to_luma(img), t_map, radius, eps)
    else:
        t_map = np.full(img.shape[:2], float(t))
    t_map = np.maximum(t_map, t_floor)[:, :, None]
    return as_image((img - a) / t_map + a)


# -- deblurring --------------------------------------------------------------

def _best_by_probe(candidates: list, probe: Probe | None, default: int) -> np.ndarray:
    """``candidates`` are zero-argument callables; the probe picks the best output (first wins ties)."""
    if probe is None:
        return candidates[default]()
    best, best_q = None, -np.inf
    for make in candidates:
        out = make()
        q = probe(out)
        if q > best_q + 1e-12:
            best, best_q = out, q
    return best


def deblur_motion(img: np.ndarray, probe: Probe | None = None, length: float | None = None,
                  angle: float | None = None, nsr: float | None = None) -> np.ndarray:
    img = as_image(img)
    if length is None or angle is None:
        est = estimate_motion_kernel(img, probe)
        length = est.length if length is None else length
        angle = est.angle if angle is None else angle
    kernel = motion_kernel(length, angle)
    grid = NSR_GRID if nsr is None else (nsr,)
    return _best_by_probe([lambda n=n: wiener_deconvolve(img, kernel, n) for n in grid], probe, len(grid) // 2)


DISK_RADII = (2, 3, 4, 5, 6)


def deblur_defocus(img: np.ndarray, probe: Probe | None = None, radius: float | None = None,
                   nsr: float | None = None) -> np.ndarray:
    """Disk-kernel Wiener filter.

    An unknown radius comes from the spectral zero of the blur; if none is
    found the probe scores the radius grid at the smallest NSR. The NSR is then
    picked by the probe for that radius.
    """
    img = as_image(img)
    grid = NSR_GRID if nsr is None else (nsr,)
    if radius is None:
        radius = estimate_defocus_radius(img)
    if radius is None:
        if probe is None:
            radius = DISK_RADII[len(DISK_RADII) // 2]
        else:
            scored = [(probe(wiener_deconvolve(img, disk_kernel(r), grid[0])), -i, r) for i, r in enumerate(DISK_RADII)]
            radius = max(scored)[2]
    kernel = disk_kernel(radius)
    return _best_by_probe([lambda n=n: wiener_deconvolve(img, kernel, n) for n in grid], probe, len(grid) // 2)


# -- low light ---------------------------------------------------------------

def adaptive_gamma(img: np.ndarray, target: float = 0.45, low: float = 2.0, high: float = 98.0) -> np.ndarray:
    """Power law that maps the mean luma to ``target``, then a 2-98 percentile stretch."""
    img = as_image(img)
    m = float(to_luma(img).mean())
    out = img
    if m < target:
        g = math.log(target) / math.log(max(m, 1e-3))
        out = np.power(img, g)
    lo, hi = np.percentile(out, [low, high])
    if hi - lo > 1e-6:
        out = (out - lo) / (hi - lo)
    return as_image(out)


def clahe_enhance(img: np.ndarray, clip: float = 2.0, tiles: int = 8) -> np.ndarray:
    q = quantize(img)
    lab = cv2.cvtColor(q, cv2.COLOR_RGB2LAB)
    lab[..., 0] = cv2.createCLAHE(clipLimit=clip, tileGridSize=(tiles, tiles)).apply(lab[..., 0])
    return as_image(cv2.cvtColor(lab, cv2.COLOR_LAB2RGB).astype(np.float32) / 255.0)


# -- resolution ---------------------------------------------------------------

def back_projection(img: np.ndarray, scale: int | None = None, iterations: int = 5, amount: float = 0.6,
                    radius: float = 1.5) -> np.ndarray:
    """Iterative back-projection against a box-downsampling model, then an unsharp mask."""
    img = as_image(img)
    h, w = img.shape[:2]
    s = stats.estimate_scale(to_luma(img)) if scale is None else int(scale)
    sw, sh = max(1, round(w / s)), max(1, round(h / s))
    target = resize(img, sw, sh, "box")
    x = img.astype(np.float32)
    for _ in range(iterations):
        err = target - cv2.resize(x, (sw, sh), interpolation=cv2.INTER_AREA)
        x = x + cv2.resize(err, (w, h), interpolation=cv2.INTER_CUBIC)
    blur = cv2.GaussianBlur(x, (0, 0), radius, borderType=cv2.BORDER_REFLECT_101)
    return as_image(x + amount * (x - blur))


# -- dispatch -----------------------------------------------------------------

def _noise_sigma(params: dict) -> float:
    if "sigma" in params:
        return float(params["sigma"])
    return NOISE_SIGMAS[params.get("level", "mid")]


_TOOLS = {
    "nlm": lambda img, p, probe: nlm_denoise(img, _noise_sigma(p)),
    "bilateral": lambda img, p, probe: bilateral_denoise(img, _noise_sigma(p)),
    "deblock": lambda img, p, probe: deblock(img, p.get("gate", 1.0), p.get("nlm_h", 8.0 / 255.0)),
    "streak_median": lambda img, p, probe: derain_median(img, int(p.get("length", 9)), p.get("angle")),
    "streak_opening": lambda img, p, probe: derain_opening(img, int(p.get("length", 9)), p.get("angle")),
    "dark_channel": lambda img, p, probe: dehaze_dark_channel(img, t=p.get("t"), airlight=p.get("airlight")),
    "wiener_motion": lambda img, p, probe: deblur_motion(img, probe, p.get("length"), p.get("angle"), p.get("nsr")),
    "wiener_disk": lambda img, p, probe: deblur_defocus(img, probe, p.get("radius"), p.get("nsr")),
    "adaptive_gamma": lambda img, p, probe: adaptive_gamma(img),
    "clahe": lambda img, p, probe: clahe_enhance(img, p.get("clip", 2.0), int(p.get("tiles", 8))),
    "back_projection": lambda img, p, probe: back_projection(img, p.get("scale")),
}

TOOL_IDS = tuple(sorted(_TOOLS))


def apply_tool(img: np.ndarray, spec: ToolSpec, probe: Probe | None = None) -> np.ndarray:
    """Apply one registered operator; ``probe`` (image -> quality) resolves internal parameter grids."""
    fn = _TOOLS.get(spec.tool_id)
    if fn is None:
        raise UnknownTool(spec.tool_id)
    p = spec.params
    if "sigma" in p and not 0.0 <= float(p["sigma"]) <= 0.5:
        raise ParamOutOfRange(f"sigma {p['sigma']}")
    if "nsr" in p and p["nsr"] is not None and float(p["nsr"]) <= 0:
        raise ParamOutOfRange(f"nsr {p['nsr']}")
    return as_image(fn(as_image(img), p, probe))


# -- registry -----------------------------------------------------------------

@dataclass(frozen=True)
class ToolRegistry:
    tools: dict

    def __post_init__(self):
        for task in TaskLabel:
            if not self.tools.get(task):
                raise ValueError(f"no tool registered for {task.value}")
        for task, specs in self.tools.items():
            for spec in specs:
                if spec.task is not task:
                    raise ValueError(f"{spec.tool_id} registered under {task.value} but targets {spec.task.value}")
                if spec.tool_id not in _TOOLS:
                    raise UnknownTool(spec.tool_id)

    def for_task(self, task: TaskLabel) -> tuple:
        return tuple(self.tools[task])

    def first_only(self) -> "ToolRegistry":
        return ToolRegistry({t: (specs[0],) for t, specs in self.tools.items()})

    def to_json(self) -> dict:
        return {t.value: [s.to_json() for s in self.tools[t]] for t in TaskLabel}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, d: dict) -> "ToolRegistry":
        return cls({TaskLabel(k): tuple(ToolSpec.from_json(s) for s in v) for k, v in d.items()})

    def with_overrides(self, overrides: dict) -> "ToolRegistry":
        """Replace the tool lists of the tasks named in ``overrides`` (JSON form)."""
        tools = dict(self.tools)
        for k, v in overrides.items():
            tools[TaskLabel(k)] = tuple(ToolSpec.from_json({"task": k, **s}) for s in v)
        return ToolRegistry(tools)


def default_registry() -> ToolRegistry:
    t = {}
    for task, level in ((TaskLabel.DN_L, "low"), (TaskLabel.DN_M, "mid"), (TaskLabel.DN_H, "high")):
        sigma = NOISE_SIGMAS[level]
        t[task] = (ToolSpec(task, "nlm", {"sigma": sigma}), ToolSpec(task, "bilateral", {"sigma": sigma}))
    t[TaskLabel.DJ] = (ToolSpec(TaskLabel.DJ, "deblock", {}),)
    t[TaskLabel.DR] = (ToolSpec(TaskLabel.DR, "streak_median", {"length": 9}),
                       ToolSpec(TaskLabel.DR, "streak_opening", {"length": 9}))
    t[TaskLabel.DH] = (ToolSpec(TaskLabel.DH, "dark_channel", {}),)
    t[TaskLabel.MDB] = (ToolSpec(TaskLabel.MDB, "wiener_motion", {}),)
    t[TaskLabel.DDB] = (ToolSpec(TaskLabel.DDB, "wiener_disk", {}),)
    t[TaskLabel.LE] = (ToolSpec(TaskLabel.LE, "adaptive_gamma", {}), ToolSpec(TaskLabel.LE, "clahe", {}))
    t[TaskLabel.SR] = (ToolSpec(TaskLabel.SR, "back_projection", {}),)
    return ToolRegistry(t)
