"""Run configuration: a JSON file plus command-line overrides (flags win)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .iqa.quality import QualityMode


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    resolution: int = 256
    seed: int = 0
    calibration: str | None = None
    registry_overrides: dict = field(default_factory=dict)
    quality_mode: str = QualityMode.NORMALIZED.value
    epsilon: float = 1e-4
    strategy: str = "greedy"
    strategies: tuple = ("greedy", "random:0", "reverse", "rollback:2")
    task_source: str = "label"
    variants_per_source: int = 10
    jobs: int = 1
    perceiver_endpoint: str | None = None
    perceiver_timeout: float = 30.0

    def __post_init__(self):
        try:
            QualityMode(self.quality_mode)
        except ValueError as e:
            raise ConfigError(f"quality_mode must be one of {[m.value for m in QualityMode]}") from e
        if self.task_source not in ("label", "perceived"):
            raise ConfigError("task_source must be 'label' or 'perceived'")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.resolution < 32:
            raise ConfigError("resolution must be >= 32")
        if self.calibration is not None and not Path(self.calibration).is_file():
            raise ConfigError(f"calibration file not found: {self.calibration}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        d = dict(d)
        if "strategies" in d:
            d["strategies"] = tuple(d["strategies"])
        if d.get("calibration") and base_dir is not None:
            d["calibration"] = str((base_dir / d["calibration"]).resolve())
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, path.parent)

    def override(self, **kwargs) -> "Config":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_json(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d
