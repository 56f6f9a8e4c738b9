"""Ordered multi-degradation simulator and dataset generator."""

from __future__ import annotations

import io
import json
import logging
import os
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .imagecore import as_image, convolve_image, load_image, quantize, resize, save_image

logger = logging.getLogger(__name__)

LABEL_NAMES = ("NI-L", "NI-M", "NI-H", "JP", "RA", "HA", "MB", "DB", "LL", "LR")
NOISE_SIGMAS = {"low": 10 / 255, "mid": 25 / 255, "high": 50 / 255}


class ParamOutOfRange(ValueError):
    pass


class EmptySourceSet(ValueError):
    pass


class DegradationKind(str, Enum):
    NOISE = "noise"
    MOTION_BLUR = "motion_blur"
    DEFOCUS_BLUR = "defocus_blur"
    JPEG = "jpeg"
    LOW_LIGHT = "low_light"
    LOW_RES = "low_res"
    HAZE = "haze"
    RAIN = "rain"


# label index for every kind except noise, whose bit depends on severity
_KIND_BIT = {
    DegradationKind.JPEG: 3,
    DegradationKind.RAIN: 4,
    DegradationKind.HAZE: 5,
    DegradationKind.MOTION_BLUR: 6,
    DegradationKind.DEFOCUS_BLUR: 7,
    DegradationKind.LOW_LIGHT: 8,
    DegradationKind.LOW_RES: 9,
}
_SEVERITY_BIT = {"low": 0, "mid": 1, "high": 2}

# (low, high) legal ranges accepted by apply_step; wider than what the sampler draws
LEGAL_RANGES = {
    DegradationKind.NOISE: {"sigma": (0.0, 0.5)},
    DegradationKind.MOTION_BLUR: {"length": (1, 41), "angle": (0.0, 180.0)},
    DegradationKind.DEFOCUS_BLUR: {"radius": (0.0, 12.0)},
    DegradationKind.JPEG: {"quality": (1, 100)},
    DegradationKind.LOW_LIGHT: {"gamma": (1.0, 5.0), "gain": (0.05, 1.0)},
    DegradationKind.LOW_RES: {"scale": (1, 8)},
    DegradationKind.HAZE: {"t": (0.0, 1.0), "airlight": (0.0, 1.0)},
    DegradationKind.RAIN: {
        "angle": (0.0, 180.0),
        "length": (1, 60),
        "density": (0.0, 0.05),
        "beta": (0.0, 1.0),
    },
}


@dataclass(frozen=True)
class DegradationStep:
    kind: DegradationKind
    params: dict = field(default_factory=dict)
    severity: str = "mid"

    def to_json(self, order: int) -> dict:
        return {
            "kind": self.kind.value,
            "order": order,
            "params": _jsonable(self.params),
            "severity": self.severity,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DegradationStep":
        return cls(DegradationKind(d["kind"]), dict(d["params"]), d.get("severity", "mid"))


@dataclass(frozen=True)
class Recipe:
    steps: tuple
    seed: int = 0
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not 1 <= len(self.steps) <= 4:
            raise ValueError(f"recipe must have 1..4 steps, got {len(self.steps)}")
        kinds = [s.kind for s in self.steps]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each degradation kind may appear at most once per recipe")


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            out[k] = [float(x) for x in v]
        elif isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def _check_params(step: DegradationStep) -> None:
    ranges = LEGAL_RANGES[step.kind]
    missing = set(ranges) - set(step.params)
    if missing:
        raise ParamOutOfRange(f"{step.kind.value}: missing params {sorted(missing)}")
    for name, (lo, hi) in ranges.items():
        vals = np.atleast_1d(np.asarray(step.params[name], dtype=np.float64))
        if not np.all(np.isfinite(vals)) or np.any(vals < lo) or np.any(vals > hi):
            raise ParamOutOfRange(f"{step.kind.value}.{name}={step.params[name]} outside [{lo}, {hi}]")
    if step.kind is DegradationKind.NOISE and step.severity not in NOISE_SIGMAS:
        raise ParamOutOfRange(f"noise severity {step.severity!r}")


# -- kernels ---------------------------------------------------------------

def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Unit-sum linear kernel; ``angle`` in degrees, counter-clockwise from +x."""
    length = max(float(length), 1.0)
    size = int(np.ceil(length)) | 1
    half = size // 2
    k = np.zeros((size, size), dtype=np.float64)
    theta = np.deg2rad(angle)
    dx, dy = np.cos(theta), -np.sin(theta)
    n = int(np.ceil(length * 4)) + 1
    ts = np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, n)
    for t in ts:
        x, y = half + t * dx, half + t * dy
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, w in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)),
                          (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += w
    return (k / k.sum()).astype(np.float32)


def disk_kernel(radius: float) -> np.ndarray:
    """Unit-sum anti-aliased disk (4x supersampled coverage)."""
    radius = float(radius)
    if radius < 0.5:
        return np.ones((1, 1), dtype=np.float32)
    half = int(np.ceil(radius))
    size = 2 * half + 1
    ss = 4
    coords = (np.arange(size * ss) + 0.5) / ss - half - 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    inside = (xx ** 2 + yy ** 2 <= radius ** 2).astype(np.float64)
    k = inside.reshape(size, ss, size, ss).mean(axis=(1, 3))
    return (k / k.sum()).astype(np.float32)


def _rain_layer(h: int, w: int, p: dict, rng: np.random.Generator) -> np.ndarray:
    angle, length = float(p["angle"]), float(p["length"])
    count = int(round(float(p["density"]) * h * w))
    layer = np.zeros((h, w), dtype=np.float32)
    theta = np.deg2rad(angle)
    dx, dy = np.cos(theta), -np.sin(theta)
    xs = rng.uniform(0, w, count)
    ys = rng.uniform(0, h, count)
    lens = rng.uniform(0.6, 1.0, count) * length
    vals = rng.uniform(0.5, 1.0, count)
    for x, y, ln, v in zip(xs, ys, lens, vals):
        p0 = (int(round((x - dx * ln / 2) * 16)), int(round((y - dy * ln / 2) * 16)))
        p1 = (int(round((x + dx * ln / 2) * 16)), int(round((y + dy * ln / 2) * 16)))
        cv2.line(layer, p0, p1, float(v), thickness=1, lineType=cv2.LINE_AA, shift=4)
    streak = motion_kernel(5, angle)
    layer = cv2.filter2D(layer, cv2.CV_32F, streak[::-1, ::-1].copy(), borderType=cv2.BORDER_REFLECT_101)
    return np.clip(layer * 1.6, 0.0, 1.0)


def jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(quantize(img), mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def apply_step(img: np.ndarray, step: DegradationStep, rng: np.random.Generator) -> np.ndarray:
    _check_params(step)
    img = as_image(img)
    p = step.params
    k = step.kind
    h, w = img.shape[:2]
    if k is DegradationKind.NOISE:
        noise = rng.standard_normal(img.shape).astype(np.float32)
        out = img + float(p["sigma"]) * noise
    elif k is DegradationKind.MOTION_BLUR:
        out = convolve_image(img, motion_kernel(p["length"], p["angle"]))
    elif k is DegradationKind.DEFOCUS_BLUR:
        out = convolve_image(img, disk_kernel(p["radius"]))
    elif k is DegradationKind.JPEG:
        out = jpeg_roundtrip(img, int(p["quality"]))
    elif k is DegradationKind.LOW_LIGHT:
        out = float(p["gain"]) * np.power(img, float(p["gamma"]))
    elif k is DegradationKind.LOW_RES:
        s = int(p["scale"])
        if s == 1:
            out = img
        else:
            small = resize(img, max(1, round(w / s)), max(1, round(h / s)), "box")
            out = resize(small, w, h, "bicubic")
    elif k is DegradationKind.HAZE:
        t = float(p["t"])
        airlight = np.broadcast_to(np.asarray(p["airlight"], dtype=np.float32), (3,))
        out = img * t + airlight[None, None, :] * (1.0 - t)
    elif k is DegradationKind.RAIN:
        layer = _rain_layer(h, w, p, rng)
        out = np.minimum(1.0, img + float(p["beta"]) * layer[:, :, None])
    else:  # pragma: no cover
        raise ParamOutOfRange(f"unknown kind {k}")
    return as_image(out)


def recipe_to_label(recipe: Recipe) -> np.ndarray:
    bits = np.zeros(10, dtype=np.uint8)
    for step in recipe.steps:
        if step.kind is DegradationKind.NOISE:
            bits[_SEVERITY_BIT[step.severity]] = 1
        else:
            bits[_KIND_BIT[step.kind]] = 1
    return bits


def recipe_rng(seed: int, source_id: str = "", variant: int = 0) -> np.random.Generator:
    """Independent stream keyed by (seed, source, variant); order of generation is irrelevant."""
    key = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF,
           zlib.crc32(source_id.encode("utf-8")), int(variant)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def apply_recipe(img: np.ndarray, recipe: Recipe) -> tuple[np.ndarray, np.ndarray]:
    rng = recipe_rng(recipe.seed, recipe.source_id, 0)
    out = as_image(img)
    for step in recipe.steps:
        out = apply_step(out, step, rng)
    return out, recipe_to_label(recipe)


# -- sampling ----------------------------------------------------------------

def sample_step(kind: DegradationKind, rng: np.random.Generator) -> DegradationStep:
    if kind is DegradationKind.NOISE:
        sev = ("low", "mid", "high")[int(rng.integers(3))]
        return DegradationStep(kind, {"sigma": NOISE_SIGMAS[sev]}, sev)
    if kind is DegradationKind.MOTION_BLUR:
        params = {"length": int(rng.integers(9, 22)), "angle": float(rng.uniform(0.0, 180.0))}
    elif kind is DegradationKind.DEFOCUS_BLUR:
        params = {"radius": float(rng.uniform(2.0, 6.0))}
    elif kind is DegradationKind.JPEG:
        params = {"quality": int(rng.integers(10, 41))}
    elif kind is DegradationKind.LOW_LIGHT:
        params = {"gamma": float(rng.uniform(1.8, 3.0)), "gain": float(rng.uniform(0.5, 0.9))}
    elif kind is DegradationKind.LOW_RES:
        params = {"scale": int(rng.choice([2, 3, 4]))}
    elif kind is DegradationKind.HAZE:
        params = {"t": float(rng.uniform(0.4, 0.75)), "airlight": [float(a) for a in rng.uniform(0.8, 1.0, 3)]}
    else:
        params = {
            "angle": float(rng.uniform(60.0, 120.0)),
            "length": int(rng.integers(12, 31)),
            "density": float(rng.uniform(0.002, 0.01)),
            "beta": float(rng.uniform(0.6, 0.9)),
        }
    return DegradationStep(kind, params, "mid")


def sample_recipe(rng: np.random.Generator, seed: int = 0, source_id: str = "",
                  count: int | None = None, kinds=None) -> Recipe:
    """Uniform step count in 1..4, kinds without replacement, random order, uniform params."""
    pool = list(DegradationKind) if kinds is None else list(kinds)
    if count is None:
        count = int(rng.integers(1, 5))
    chosen = rng.permutation(len(pool))[:count]
    steps = [sample_step(pool[i], rng) for i in chosen]
    return Recipe(tuple(steps), seed, source_id)


# -- dataset -----------------------------------------------------------------

@dataclass
class ManifestRow:
    id: str
    source: str
    degraded: str
    recipe: Recipe
    label: np.ndarray

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "degraded": self.degraded,
            "steps": [s.to_json(i + 1) for i, s in enumerate(self.recipe.steps)],
            "label": [int(b) for b in self.label],
            "seed": int(self.recipe.seed),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ManifestRow":
        steps = sorted(d["steps"], key=lambda s: s["order"])
        recipe = Recipe(tuple(DegradationStep.from_json(s) for s in steps), int(d["seed"]), d["id"])
        return cls(d["id"], d["source"], d["degraded"], recipe, np.asarray(d["label"], dtype=np.uint8))


@dataclass
class Manifest:
    rows: list
    root: Path = Path(".")

    def source_path(self, row: ManifestRow) -> Path:
        return (self.root / row.source).resolve()

    def degraded_path(self, row: ManifestRow) -> Path:
        return (self.root / row.degraded).resolve()

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.rows)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        rows = [ManifestRow.from_json(json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
        return cls(rows, path.parent)


def list_images(src_dir) -> list[Path]:
    src_dir = Path(src_dir)
    return sorted(p for p in src_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))


def generate_dataset(src_dir, out_dir, variants_per_source: int = 10, seed: int = 0,
                     manifest_name: str = "manifest.jsonl") -> Manifest:
    sources = list_images(src_dir)
    if not sources:
        raise EmptySourceSet(f"no PNG/JPEG images in {src_dir}")
    if variants_per_source < 1:
        raise ValueError("variants_per_source must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for src in sources:
        img = load_image(src)
        source_id = src.stem
        for v in range(variants_per_source):
            rng = recipe_rng(seed, source_id, v + 1)
            recipe_seed = int(rng.integers(0, 2 ** 63))
            recipe = sample_recipe(rng, recipe_seed, f"{source_id}_{v:02d}")
            degraded, label = apply_recipe(img, recipe)
            name = f"{source_id}_{v:02d}.png"
            save_image(degraded, out_dir / name)
            rel_src = Path(os.path.relpath(src.resolve(), out_dir.resolve()))
            rows.append(ManifestRow(f"{source_id}_{v:02d}", rel_src.as_posix(), name, recipe, label))
    manifest = Manifest(rows, out_dir)
    manifest.write(out_dir / manifest_name)
    logger.info("wrote %d degraded images to %s", len(rows), out_dir)
    return manifest
