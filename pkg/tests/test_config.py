import json

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import mark, raises

from bp_layer.config import (
    DEFAULT_LEARNING_RATE,
    DEFAULT_STEPS,
    ModelParams,
    TrainConfig,
    spec_from_dict,
    spec_to_dict,
)
from bp_layer.errors import InputError
from bp_layer.grid_model import FullMatrix, TruncatedJump


def test_defaults_without_a_file():
    cfg = TrainConfig()
    assert cfg.learning_rate == DEFAULT_LEARNING_RATE
    assert cfg.steps == DEFAULT_STEPS
    assert cfg.algo == "bp"


def test_missing_file_means_defaults(tmp_path):
    assert TrainConfig(tmp_path / "absent.json").as_dict() == TrainConfig().as_dict()


def test_overrides_beat_the_file(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"steps": 7, "learning_rate": 0.5}))
    cfg = TrainConfig(path, steps=3, learning_rate=None)
    assert cfg.steps == 3
    assert cfg.learning_rate == 0.5


def test_write_back_completes_the_file(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"steps": 7}))
    cfg = TrainConfig(path, write_back=True)
    assert json.loads(path.read_text()) == cfg.as_dict()


def test_unknown_keys_are_reported(tmp_path, caplog):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"stepz": 7}))
    TrainConfig(path)
    assert "stepz" in caplog.text


def test_malformed_json_is_an_input_error(tmp_path):
    path = tmp_path / "train.json"
    path.write_text("{steps: 7")
    with raises(InputError):
        TrainConfig(path)


@mark.parametrize(
    "overrides",
    [
        {"learning_rate": -0.1},
        {"steps": 0},
        {"levels": 0},
        {"huber_delta": 0.0},
        {"beta": -1.0},
        {"algo": "icm"},
    ],
)
def test_invalid_settings(overrides):
    with raises(InputError):
        TrainConfig(**overrides)


def test_params_survive_save_and_load(tmp_path):
    path = tmp_path / "params.json"
    params = ModelParams(2.5, ModelParams.default_jump(1).levels + ModelParams.default_matrix([3]).levels)
    params.save(path)
    loaded = ModelParams.load(path)
    assert loaded.to_dict() == params.to_dict()
    assert isinstance(loaded.levels[0], TruncatedJump)
    assert isinstance(loaded.levels[1], FullMatrix)


def test_loading_reports_bad_files(tmp_path):
    with raises(InputError):
        ModelParams.load(tmp_path / "absent.json")
    path = tmp_path / "params.json"
    path.write_text(json.dumps({"temperature": 1.0}))
    with raises(InputError):
        ModelParams.load(path)
    path.write_text(json.dumps({"temperature": 0.0, "levels": []}))
    with raises(InputError):
        ModelParams.load(path)


def test_default_matrix_mirrors_the_jump_penalties():
    (level,) = ModelParams.default_matrix([4]).levels
    expected = [
        [0.6, 0.4, 0.2, 0.0],
        [0.4, 0.6, 0.4, 0.2],
        [0.2, 0.4, 0.6, 0.4],
        [0.0, 0.2, 0.4, 0.6],
    ]
    assert_allclose(level.matrix.horizontal, expected)
    assert_array_equal(level.matrix.vertical, level.matrix.horizontal)


def test_default_matrix_follows_every_level():
    params = ModelParams.default_matrix([2, 3, 5])
    assert [level.matrix.horizontal.shape for level in params.levels] == [(2, 2), (3, 3), (5, 5)]
    assert all((level.matrix.horizontal >= 0).all() for level in params.levels)


def test_spec_dicts():
    spec = spec_from_dict({"matrix": {"horizontal": np.eye(2).tolist(), "vertical": [[0, 1], [1, 0]]}})
    assert spec_to_dict(spec)["matrix"]["vertical"] == [[0.0, 1.0], [1.0, 0.0]]
    with raises(InputError):
        spec_from_dict({"jump": {"p4": 1.0}})
    with raises(InputError):
        spec_from_dict({"potts": 1.0})
    with raises(InputError):
        spec_from_dict({"jump": {"p3": -1.0}})
