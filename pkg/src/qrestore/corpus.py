"""Pristine source corpus built from photographs bundled with installed packages.

No network access is assumed, so sources are random crops of the sample
photographs shipped with scikit-image, scikit-learn and matplotlib. Each base
photo is first area-downscaled (which also removes its own compression noise),
then flipped/rotated and cropped to the working resolution.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import cv2
import numpy as np

from .imagecore import as_image, load_image, save_image, to_luma

logger = logging.getLogger(__name__)


def _base_paths() -> list[Path]:
    import matplotlib
    import sklearn.datasets
    import skimage.data

    sk = Path(skimage.data.__file__).parent
    names = ["astronaut.png", "chelsea.png", "coffee.png", "rocket.jpg", "motorcycle_left.png",
             "ihc.png", "retina.jpg", "camera.png", "coins.png", "grass.png", "gravel.png",
             "brick.png"]
    paths = [sk / n for n in names]
    skl = Path(sklearn.datasets.__file__).parent / "images"
    paths += [skl / "china.jpg", skl / "flower.jpg"]
    mpl = Path(matplotlib.get_data_path()) / "sample_data"
    paths += [mpl / "grace_hopper.jpg"]
    return [p for p in paths if p.exists()]


def base_images() -> list[tuple[str, np.ndarray]]:
    return [(p.stem, load_image(p)) for p in _base_paths()]


def _acceptable(crop: np.ndarray) -> bool:
    luma = to_luma(crop)
    return 0.2 <= float(luma.mean()) <= 0.8 and float(luma.std()) >= 0.06


def pristine_crops(n: int, size: int = 256, seed: int = 0, max_tries: int = 200) -> list[tuple[str, np.ndarray]]:
    """Draw ``n`` acceptable crops, cycling through base photos in a seeded order."""
    rng = np.random.default_rng(seed)
    bases = base_images()
    out = []
    i = 0
    tries = 0
    while len(out) < n:
        name, base = bases[i % len(bases)]
        i += 1
        h, w = base.shape[:2]
        # downscale in [lo, hi]; lo keeps the crop inside the photo
        lo = max(size / min(h, w), 0.3)
        hi = max(lo, 0.75)
        scale = float(rng.uniform(lo, hi))
        nh, nw = max(size, int(round(h * scale))), max(size, int(round(w * scale)))
        img = cv2.resize(base, (nw, nh), interpolation=cv2.INTER_AREA)
        if rng.random() < 0.5:
            img = img[:, ::-1]
        img = np.rot90(img, int(rng.integers(4)))
        y = int(rng.integers(0, img.shape[0] - size + 1))
        x = int(rng.integers(0, img.shape[1] - size + 1))
        crop = as_image(img[y:y + size, x:x + size])
        tries += 1
        if not _acceptable(crop):
            if tries > max_tries * n:
                raise RuntimeError("could not draw enough acceptable crops")
            continue
        out.append((f"{name}_{len(out):04d}", crop))
    return out


def build_corpus(out_dir, n: int, size: int = 256, seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, crop in pristine_crops(n, size, seed):
        p = out_dir / f"{name}.png"
        save_image(crop, p)
        paths.append(p)
    logger.info("wrote %d pristine crops to %s", len(paths), out_dir)
    return paths


def corpus_digest(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode("utf-8"))
        h.update(p.read_bytes())
    return h.hexdigest()
