"""No-reference quality metrics and the scalar quality score built from them."""

from .brisque import RidgeRegressor, brisque_score
from .cpbd import cpbd_score
from .nss import CorpusTooSmall, NaturalnessModel, niqe_score
from .quality import MetricVector, MissingSlots, QualityMode, QualityScore, measure, quality_score

__all__ = [
    "CorpusTooSmall", "MetricVector", "MissingSlots", "NaturalnessModel", "QualityMode", "QualityScore",
    "RidgeRegressor", "brisque_score", "cpbd_score", "measure", "niqe_score", "quality_score",
]
