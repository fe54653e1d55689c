import json

import pytest

from localtraj.exceptions import ParameterError
from localtraj.settings import PipelineConfig, default_config_json, from_dict, load_config, to_dict


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.mode == "2d"
    assert cfg.tracker.L == 15
    assert cfg.volume.size == 32
    assert cfg.localize.distance_threshold == 0.02
    assert cfg.encode.K == 128
    assert cfg.classify.C == 1.0
    assert from_dict(None) == cfg


def test_partial_mapping():
    cfg = from_dict({"mode": "3d", "seed": 7, "encode": {"K": 16, "global_bow": True}, "flow": None})
    assert cfg.mode == "3d"
    assert cfg.seed == 7
    assert cfg.encode.K == 16
    assert cfg.encode.global_bow
    assert cfg.encode.max_iterations == 100
    assert cfg.flow == PipelineConfig().flow


@pytest.mark.parametrize(
    "data",
    [
        [],
        {"modes": "2d"},
        {"encode": {"k": 3}},
        {"encode": 5},
        {"mode": "4d"},
        {"tracker": {"L": 10}},
        {"encode": {"K": 64}, "selection": {"sample_size": 32}},
        {"classify": {"C": -1}},
    ],
)
def test_bad_mappings(data):
    with pytest.raises(ParameterError):
        from_dict(data)


def test_matching_lengths_are_accepted():
    cfg = from_dict({"tracker": {"L": 9}, "volume": {"L": 9}})
    assert cfg.tracker.L == cfg.volume.L == 9


def test_replace_helpers():
    cfg = PipelineConfig().with_encode(global_bow=True, use_rejected=True)
    assert cfg.encode.global_bow and cfg.encode.use_rejected
    assert not PipelineConfig().encode.global_bow
    assert cfg.replace(seed=3).seed == 3


def test_load_yaml_and_json(tmp_path):
    yaml_file = tmp_path / "config.yaml"
    yaml_file.write_text("mode: 3d\nlocalize:\n  distance_threshold_3d: 0.1\n")
    assert load_config(str(yaml_file)).localize.distance_threshold_3d == 0.1

    json_file = tmp_path / "config.json"
    json_file.write_text(json.dumps(to_dict(PipelineConfig(seed=11))))
    assert load_config(str(json_file)) == PipelineConfig(seed=11)


def test_load_errors(tmp_path):
    with pytest.raises(ParameterError):
        load_config(str(tmp_path / "missing.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("mode: [2d\n")
    with pytest.raises(ParameterError):
        load_config(str(broken))


def test_default_config_json():
    data = json.loads(default_config_json())
    assert data["encode"]["K"] == 128
    assert data["volume"] == {"size": 32, "cells_x": 2, "cells_y": 2, "cells_t": 3, "L": 15}
    assert from_dict(data) == PipelineConfig()
