import json

import pytest

from qrestore.config import Config, ConfigError
from qrestore.iqa.quality import QualityMode


def test_defaults():
    c = Config()
    assert c.resolution == 256 and c.epsilon == 1e-4 and c.quality_mode == "Normalized"


def test_load_resolves_relative_calibration(tmp_path):
    (tmp_path / "cal.json").write_text("{}")
    (tmp_path / "run.json").write_text(json.dumps({"calibration": "cal.json", "seed": 4, "strategies": ["greedy"]}))
    c = Config.load(tmp_path / "run.json")
    assert c.calibration == str((tmp_path / "cal.json").resolve())
    assert c.seed == 4 and c.strategies == ("greedy",)
    assert Config.from_dict(c.to_json()) == c


def test_flags_win_and_none_keeps_file_value():
    c = Config(seed=3).override(seed=9, epsilon=None)
    assert c.seed == 9 and c.epsilon == 1e-4


@pytest.mark.parametrize("bad", [{"colour": 1}, {"quality_mode": "psnr"}, {"epsilon": -1}, {"jobs": 0},
                                 {"task_source": "oracle"}, {"calibration": "/nonexistent/cal.json"},
                                 {"resolution": 8}])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        Config.from_dict(bad)


def test_unreadable_config(tmp_path):
    (tmp_path / "x.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "x.json")
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "missing.json")


def test_quality_mode_aliases():
    assert QualityMode("raweq1") is QualityMode.RAW_EQ1
    assert QualityMode("normalized") is QualityMode.NORMALIZED
    assert Config(quality_mode="RawEq1").quality_mode == "RawEq1"
