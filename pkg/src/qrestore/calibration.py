"""The calibration artifact: fitted quality model, distortion regressor, normalisation tables, detector thresholds.

Everything fitted from the pristine corpus lives in one JSON document so the
metrics and detectors can be reloaded bit-for-bit by any consumer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .iqa.brisque import RidgeRegressor
from .iqa.calibrate import calibrate_iqa
from .iqa.nss import NaturalnessModel
from .iqa.quality import MetricVector, QualityMode, measure, quality_score
from .perceive.calibrate import calibrate_detectors
from .perceive.detectors import DetectorThresholds

logger = logging.getLogger(__name__)

ENV_VAR = "QRESTORE_CALIBRATION"
FORMAT_VERSION = 1


class CalibrationMissing(RuntimeError):
    pass


@dataclass
class Calibration:
    model: NaturalnessModel
    regressor: RidgeRegressor
    thresholds: DetectorThresholds
    seed: int = 0
    corpus_digest: str = ""

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "seed": self.seed,
            "corpus_digest": self.corpus_digest,
            "naturalness": {
                "feature_mean": self.model.feature_mean.tolist(),
                "feature_cov": self.model.feature_cov.tolist(),
                "fitted_on": self.model.fitted_on,
                "percentile_table": {k: list(v) for k, v in sorted(self.model.percentile_table.items())},
                "reference_stats": dict(sorted(self.model.reference_stats.items())),
            },
            "regressor": self.regressor.to_json(),
            "detector_thresholds": self.thresholds.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def from_json(cls, d: dict) -> "Calibration":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported calibration version {d.get('version')!r}")
        n = d["naturalness"]
        model = NaturalnessModel(n["feature_mean"], n["feature_cov"], n.get("fitted_on", ""),
                                 {k: list(v) for k, v in n["percentile_table"].items()},
                                 dict(n["reference_stats"]))
        model.validate()
        return cls(model, RidgeRegressor.from_json(d["regressor"]),
                   DetectorThresholds.from_json(d["detector_thresholds"]), int(d.get("seed", 0)),
                   d.get("corpus_digest", ""))

    @classmethod
    def load(cls, path) -> "Calibration":
        return cls.from_json(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def calibrate(images: list, seed: int = 0) -> Calibration:
    """Fit the quality model and the detector thresholds on a pristine corpus."""
    model, regressor = calibrate_iqa(images, seed)
    thresholds = calibrate_detectors(images, seed)
    return Calibration(model, regressor, thresholds, seed, model.fitted_on)


def resolve_calibration(path=None) -> Calibration:
    """Load from ``path`` or, failing that, from the file named by the environment variable."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        raise CalibrationMissing(f"no calibration given and {ENV_VAR} is unset")
    if not Path(path).is_file():
        raise CalibrationMissing(f"calibration file not found: {path}")
    return Calibration.load(path)


@dataclass
class QualityContext:
    """Scores images with the calibrated metrics; ``evaluations`` counts calls to :meth:`quality`."""

    calibration: Calibration
    mode: QualityMode = QualityMode.NORMALIZED
    evaluations: int = field(default=0, compare=False)

    def measure(self, img: np.ndarray) -> MetricVector:
        return measure(img, self.calibration.model, self.calibration.regressor)

    def score(self, vector: MetricVector) -> float:
        return quality_score(vector, self.mode).value

    def quality(self, img: np.ndarray) -> float:
        self.evaluations += 1
        return self.score(self.measure(img))

    def probe(self, img: np.ndarray) -> float:
        """Normalized-mode quality used inside tools to resolve parameter grids."""
        return quality_score(self.measure(img), QualityMode.NORMALIZED).value
