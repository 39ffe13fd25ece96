import copy

import numpy as np
import pytest

from msdgp.autodiff import Tensor
from msdgp.config import ModelConfig
from msdgp.data import GeneratorSpec, oversample_repeats, prepare
from msdgp.errors import DivergenceDetected, InvalidConfig
from msdgp.model import ConditioningSpec, DgpModel
from msdgp.pipeline import acoustic_data
from msdgp.rng import stream
from msdgp.trainer import AdamState, TrainConfig, TrainData, adam_step, init_model, train, write_trace

from gp_oracles import gram


def test_config_validation():
    for bad in ({"batch_size": 0}, {"epochs": -1}, {"learning_rate": 0.0}):
        with pytest.raises(InvalidConfig):
            TrainConfig(**bad)


def test_kind_defaults():
    assert TrainConfig().resolved("dgp").epochs == 50
    assert TrainConfig().resolved("dgplvm").learning_rate == 0.01
    assert TrainConfig().batch_size == 1024
    assert TrainConfig().oversample_factor == 20


def test_adam_first_step():
    params, state = adam_step({"t": np.zeros(3)}, {"t": np.array([0.5, -2.0, 0.0])}, AdamState(), TrainConfig(learning_rate=0.01))
    assert state.step == 1
    assert np.allclose(params["t"], [-0.01, 0.01, 0.0], atol=1e-6)


def test_adam_zero_gradient_keeps_params():
    p = {"a": np.array([1.0, 2.0])}
    new, _ = adam_step(p, {"a": np.zeros(2)}, AdamState(), TrainConfig(learning_rate=0.1))
    assert np.array_equal(new["a"], p["a"])


def test_adam_is_pure_and_replayable():
    r = np.random.default_rng(0)
    grads = [{"a": r.normal(size=3)} for _ in range(5)]
    cfg = TrainConfig(learning_rate=0.05)

    def run():
        p, s = {"a": np.ones(3)}, AdamState()
        states = []
        for g in grads:
            p, s = adam_step(p, g, s, cfg)
            states.append((p["a"].copy(), s.m["a"].copy(), s.v["a"].copy(), s.step))
        return states

    a, b = run(), run()
    for x, y in zip(a, b):
        assert all(np.array_equal(u, v) for u, v in zip(x[:3], y[:3])) and x[3] == y[3]
    p0, s0 = {"a": np.ones(3)}, AdamState()
    adam_step(p0, grads[0], s0, cfg)
    assert np.array_equal(p0["a"], np.ones(3)) and s0.step == 0 and not s0.m


def test_init_model_follows_config():
    cfg = ModelConfig(kind="dgplvm", hidden_layers=2, width=5, m_hidden=7, latent_dim=3)
    m = init_model(cfg, 6, 4, 3, stream(0, "i"))
    assert [l.num_inducing for l in m.hidden_layers] == [7, 7, 7]
    assert m.speaker_latent.mu.shape == (3, 3)
    assert all(np.all(t.data == 0) for n, t in m.parameters().items() if n.endswith("q_mu"))
    a = init_model(cfg, 6, 4, 3, stream(0, "i")).hidden_layers[0].Z.data
    assert np.array_equal(a, m.hidden_layers[0].Z.data)
    dnn = init_model(ModelConfig(kind="dnn", hidden_layers=1, width=9), 6, 4, 3, stream(0, "i"))
    assert dnn.architecture()["widths"] == [9]
    code = init_model(ModelConfig(kind="dgp"), 6, 4, 3, stream(0, "i"))
    assert code.conditioning.mode == "speaker_code"


def toy_problem():
    r = np.random.default_rng(0)
    X = r.uniform(0.01, 0.99, (128, 2))
    K = gram(X, X) + 1e-9 * np.eye(128)
    f = np.linalg.cholesky(K) @ r.standard_normal(128)
    y = f + 0.1 * r.standard_normal(128)
    return X, y


def test_zero_epochs_returns_identical_model():
    m = DgpModel.create(2, 1, [2], 3, stream(0, "z"), ConditioningSpec())
    data = TrainData(np.ones((4, 2)), np.ones((4, 1)), np.zeros(4, int))
    out, trace = train(m, data, TrainConfig(epochs=0))
    assert trace == []
    assert all(np.array_equal(a.data, b.data) for a, b in zip(m.parameters().values(), out.parameters().values()))


def test_toy_gp_fits_held_out_data():
    X, y = toy_problem()
    m = DgpModel.create(2, 1, [], 16, stream(0, "toy"), ConditioningSpec())
    data = TrainData(X[:64], y[:64, None], np.zeros(64, int))
    trained, trace = train(m, data, TrainConfig(batch_size=8, epochs=50))
    pred = trained.predict(X[64:], np.zeros(64, int))[:, 0]
    assert np.sqrt(np.mean((pred - y[64:]) ** 2)) < 2 * 0.1
    assert len(trace) == 50
    smooth = np.convolve([t.objective for t in trace], np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth[int(0.2 * len(smooth)) :]) >= 0)


def test_training_is_bitwise_deterministic():
    X, y = toy_problem()
    m = DgpModel.create(2, 1, [2], 4, stream(0, "d"), ConditioningSpec())
    data = TrainData(X[:32], y[:32, None], np.zeros(32, int))
    a, ta = train(m, data, TrainConfig(batch_size=8, epochs=3, seed=5))
    b, tb = train(m, data, TrainConfig(batch_size=8, epochs=3, seed=5))
    assert [t.objective for t in ta] == [t.objective for t in tb]
    for name, t in a.parameters().items():
        assert np.array_equal(t.data, b.parameters()[name].data)
    c, _ = train(m, data, TrainConfig(batch_size=8, epochs=3, seed=6))
    assert not np.array_equal(c.hidden_layers[0].Z.data, a.hidden_layers[0].Z.data)


def test_divergence_detected():
    m = DgpModel.create(2, 1, [], 3, stream(0, "n"), ConditioningSpec())
    data = TrainData(np.ones((4, 2)), np.array([[np.inf]] * 4), np.zeros(4, int))
    with pytest.raises(DivergenceDetected):
        train(m, data, TrainConfig(epochs=1))


def test_target_frames_visited_twenty_times_per_epoch():
    spec = GeneratorSpec(situation="imbalanced", n_utterances=10, target_budget=5)
    corpus = prepare(spec, 0)
    data = acoustic_data(corpus, 20)
    index = data.epoch_index()
    counts = np.bincount(index, minlength=data.X.shape[0])
    targets = np.isin(data.speakers, list(corpus.targets.values()))
    assert np.all(counts[targets] == 20)
    assert np.all(counts[~targets] == 1)
    train_utts = {u for u, lab in corpus.split.items() if lab == "train"}
    for k in corpus.targets.values():
        assert len([u for u in corpus.utterances(k) if u in train_utts]) == 5


def test_trace_csv(tmp_path):
    X, y = toy_problem()
    m = DgpModel.create(2, 1, [], 3, stream(0, "t"), ConditioningSpec())
    _, trace = train(m, TrainData(X[:8], y[:8, None], np.zeros(8, int)), TrainConfig(epochs=2))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,objective,wall_ms"
    assert len(lines) == 3 and lines[1].startswith("0,")
