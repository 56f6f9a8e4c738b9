"""Per-degradation detectors, perception vectors and their accuracy metrics."""

from .detectors import Detection, DetectorReport, DetectorThresholds, InternalPerceiver, perceive
from .external import ExternalPerceiver, MalformedAnswer, TransportError, external_perceive
from .metrics import Empty, EmptyClass, LengthMismatch, dacc, macc, precision
from .stats import estimate_noise_sigma

__all__ = [
    "Detection", "DetectorReport", "DetectorThresholds", "Empty", "InternalPerceiver", "EmptyClass", "ExternalPerceiver",
    "LengthMismatch", "MalformedAnswer", "TransportError", "dacc", "estimate_noise_sigma", "external_perceive",
    "macc", "perceive", "precision",
]
