import json

import pytest

from msdgp.config import RunConfig, ModelConfig
from msdgp.errors import InvalidConfig
from msdgp.trainer import KIND_DEFAULTS


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"model": {"kind": "dgp", "widht": 4}},
    {"train": {"epoch": 3}},
    {"eval": {"metric": ["mcd_db"]}},
    {"data": {"n_speaker": 3}},
    {"data": {"path": "x", "n_speakers": 3}},
])
def test_unknown_keys_are_rejected(doc):
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict(doc)


@pytest.mark.parametrize("model", [
    {"kind": "gp"},
    {"hidden_layers": -1},
    {"m_hidden": 0},
    {"kind": "dgplvm", "latent_dim": 0},
    {"hidden_layers": 2, "feed_layers": [3]},
    {"feed_layers": []},
    {"feed_layers": "some"},
])
def test_bad_model_values(model):
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict({"model": model})


def test_bad_seed_and_metrics():
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict({"seed": "1"})
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict({"eval": {"metrics": ["pesq"]}})


@pytest.mark.parametrize("kind", ["dnn", "dgp", "dgplvm"])
def test_resolved_fills_kind_defaults(kind):
    run = RunConfig.from_dict({"seed": 7, "model": {"kind": kind}}).resolved()
    assert run.train.epochs == KIND_DEFAULTS[kind]["epochs"]
    assert run.train.learning_rate == KIND_DEFAULTS[kind]["learning_rate"]
    assert run.train.seed == 7
    assert run.model.width is not None and run.model.duration_width is not None
    # resolving twice changes nothing
    assert run.resolved() == run


def test_explicit_values_survive_resolution():
    run = RunConfig.from_dict({"model": {"kind": "dgp", "width": 5}, "train": {"epochs": 2, "learning_rate": 0.1}})
    r = run.resolved()
    assert (r.model.width, r.train.epochs, r.train.learning_rate) == (5, 2, 0.1)


def test_conditioning_modes():
    assert ModelConfig(kind="dgplvm").conditioning_mode() == "latent"
    assert ModelConfig(kind="dgp").conditioning_mode() == "speaker_code"
    assert ModelConfig(kind="dgp", speaker_conditioning=False).conditioning_mode() == "none"
    assert ModelConfig(kind="dnn").conditioning_mode() == "none"


def test_duration_config_feeds_every_layer():
    cfg = ModelConfig(kind="dgp", hidden_layers=3, feed_layers=[2], duration_hidden_layers=1)
    d = cfg.for_duration()
    assert d.hidden_layers == 1 and d.feed_layers == "all" and d.m_hidden == cfg.duration_m_hidden


def test_round_trip_through_json(tmp_path):
    run = RunConfig.from_dict({"seed": 3, "data": {"n_speakers": 4}, "model": {"kind": "dgp", "feed_layers": [1]}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(run.to_dict()))
    assert RunConfig.load(path) == run


def test_invalid_json_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(InvalidConfig):
        RunConfig.load(path)


def test_path_config_has_no_generator_spec():
    run = RunConfig.from_dict({"data": {"path": "somewhere"}})
    with pytest.raises(InvalidConfig):
        run.generator_spec()
