"""Metric vector ``[ni, br, cp, cl, hy]`` and the signed five-way quality mean."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .brisque import RidgeRegressor, brisque_score
from .cpbd import cpbd_score
from .nss import NaturalnessModel, niqe_score
from .proxies import clarity_proxy, local_distortion_proxy, normalize

SLOTS = ("ni", "br", "cp", "cl", "hy")
# +1: higher is better, -1: higher is worse
SLOT_SIGNS = {"ni": -1, "br": -1, "cp": 1, "cl": 1, "hy": 1}


class QualityMode(str, Enum):
    RAW_EQ1 = "RawEq1"
    NORMALIZED = "Normalized"

    @classmethod
    def _missing_(cls, value):
        aliases = {"raweq1": cls.RAW_EQ1, "raw": cls.RAW_EQ1, "normalized": cls.NORMALIZED}
        return aliases.get(str(value).lower())


class MissingSlots(ValueError):
    pass


@dataclass(frozen=True)
class MetricVector:
    ni: float
    br: float
    cp: float
    cl: float
    hy: float
    normalized: tuple | None = None

    def __post_init__(self):
        for s in SLOTS:
            if not math.isfinite(getattr(self, s)):
                raise ValueError(f"metric slot {s} is not finite")
        if self.normalized is not None:
            if len(self.normalized) != 5 or not all(0.0 <= v <= 1.0 for v in self.normalized):
                raise ValueError("normalized slots must be five values in [0, 1]")

    def raw(self) -> tuple:
        return tuple(getattr(self, s) for s in SLOTS)

    def to_json(self) -> dict:
        return {
            "raw": dict(zip(SLOTS, self.raw())),
            "normalized": None if self.normalized is None else dict(zip(SLOTS, self.normalized)),
        }


@dataclass(frozen=True)
class QualityScore:
    value: float
    mode: QualityMode


def quality_score(v: MetricVector, mode: QualityMode = QualityMode.NORMALIZED) -> QualityScore:
    mode = QualityMode(mode)
    if mode is QualityMode.RAW_EQ1:
        value = (v.cp + v.cl + v.hy - v.ni - v.br) / 5.0
    else:
        if v.normalized is None:
            raise MissingSlots("normalized slots are required for Normalized mode")
        ni, br, cp, cl, hy = v.normalized
        value = (cp + cl + hy + (1.0 - ni) + (1.0 - br)) / 5.0
    return QualityScore(float(value), mode)


def measure(img, model: NaturalnessModel, regressor: RidgeRegressor) -> MetricVector:
    """Compute all five raw slots, plus normalized slots when the model carries a percentile table."""
    table = model.percentile_table
    kurtosis_ref = model.reference_stats["mscn_kurtosis"]
    raw = {
        "ni": niqe_score(img, model),
        "br": brisque_score(img, regressor),
        "cp": cpbd_score(img),
        "cl": clarity_proxy(img, table),
        "hy": local_distortion_proxy(img, table, kurtosis_ref),
    }
    normalized = None
    if all(s in table for s in SLOTS):
        normalized = tuple(normalize(raw[s], table, s) for s in SLOTS)
    return MetricVector(normalized=normalized, **raw)
