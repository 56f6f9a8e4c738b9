"""NSS-feature distortion index: ridge regression trained on this repo's own synthetic sweep."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nss import nss_features
from .proxies import ModelMissing


@dataclass
class RidgeRegressor:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    weights: np.ndarray
    bias: float
    alpha: float = 1.0

    def __post_init__(self):
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_scale = np.asarray(self.feature_scale, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = float(self.bias)

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(features) - self.feature_mean) / self.feature_scale
        return np.clip(z @ self.weights + self.bias, 0.0, 100.0)

    def to_json(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "alpha": self.alpha,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RidgeRegressor":
        return cls(d["feature_mean"], d["feature_scale"], d["weights"], d["bias"], d.get("alpha", 1.0))


def fit_ridge(features: np.ndarray, targets: np.ndarray, alpha: float = 1.0) -> RidgeRegressor:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    z = (x - mean) / scale
    y_mean = y.mean()
    gram = z.T @ z + alpha * np.eye(z.shape[1])
    w = np.linalg.solve(gram, z.T @ (y - y_mean))
    return RidgeRegressor(mean, scale, w, y_mean, alpha)


def brisque_score(img: np.ndarray, regressor: RidgeRegressor | None) -> float:
    """Predicted distortion index in [0, 100]; higher is worse."""
    if regressor is None:
        raise ModelMissing("no distortion regressor loaded")
    return float(regressor.predict(nss_features(img))[0])
