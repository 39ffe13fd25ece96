import math
import warnings
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdgp.autodiff import Tensor
from msdgp.checkpoint import System
from msdgp.data import GeneratorSpec, prepare
from msdgp.errors import NonPositiveF0, ShapeMismatch, WrongModelKind
from msdgp.eval import (
    EmptyVoicedWarning,
    dur_rmse,
    evaluate,
    export_latents,
    f0_rmse_cents,
    format_metric,
    mcd,
    render_table,
    validate_report,
)
from msdgp.model import ConditioningSpec, DgpModel, SpeakerLatent
from msdgp.rng import stream

UNIT_MCD = 10.0 / math.log(10.0) * math.sqrt(2.0)


def test_mcd_examples():
    a = np.random.default_rng(0).normal(size=(5, 6))
    assert mcd(a, a) == 0.0
    b = np.zeros((1, 4))
    b2 = b.copy()
    b2[0, 2] = 1.0
    assert abs(mcd(b, b2) - UNIT_MCD) < 1e-9
    # frozen from direct evaluation of (10 / ln 10) * sqrt(2)
    assert abs(UNIT_MCD - 6.141851463713754) < 1e-12
    b3 = b.copy()
    b3[0, 0] = 5.0
    assert mcd(b, b3) == 0.0


def test_mcd_shape_errors():
    with pytest.raises(ShapeMismatch):
        mcd(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeMismatch):
        mcd(np.zeros((2, 1)), np.zeros((2, 1)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_mcd_is_a_metric_on_single_frames(vals):
    a, b, c = (np.array(vals[i : i + 3])[None] for i in (0, 3, 6))
    assert mcd(a, b) == mcd(b, a)
    assert mcd(a, c) <= mcd(a, b) + mcd(b, c) + 1e-9
    assert (mcd(a, b) == 0) == np.array_equal(a[0, 1:], b[0, 1:])


def test_f0_examples():
    f = np.array([100.0, 200.0, 150.0])
    assert f0_rmse_cents(f, f) == 0.0
    assert f0_rmse_cents([440.0], [220.0]) == 1200.0
    assert abs(f0_rmse_cents([466.1638], [440.0]) - 100.0) < 1e-3


def test_f0_mask_and_empty_intersection():
    ref, pred = np.array([100.0, 200.0]), np.array([100.0, 400.0])
    assert f0_rmse_cents(ref, pred, [True, False]) == 0.0
    with pytest.warns(EmptyVoicedWarning):
        assert f0_rmse_cents(ref, pred, [False, False]) == 0.0


def test_f0_rejects_non_positive():
    with pytest.raises(NonPositiveF0):
        f0_rmse_cents([100.0, 0.0], [100.0, 120.0])
    # unvoiced frames may carry anything
    assert f0_rmse_cents([100.0, 0.0], [100.0, -1.0], [True, False]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(50, 500), min_size=6, max_size=6), st.floats(0.01, 100))
def test_f0_unit_invariance(vals, scale):
    ref, pred = np.array(vals[:3]), np.array(vals[3:])
    assert math.isclose(f0_rmse_cents(ref, pred), f0_rmse_cents(ref * scale, pred * scale), rel_tol=1e-9, abs_tol=1e-9)


def test_dur_examples():
    assert dur_rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert abs(dur_rmse([3.0, -4.0], [0.0, 0.0]) - math.sqrt(12.5)) < 1e-9
    assert abs(dur_rmse([25.6], [0.0]) - 25.6) < 1e-12
    with pytest.raises(ShapeMismatch):
        dur_rmse([1.0], [1.0, 2.0])


def report(label, situation="balanced", **agg):
    agg.setdefault("n_frames", 10)
    return {"label": label, "situation": situation, "aggregate": agg, "model": label.lower(), "corpus": "c", "seed": 0}


def bold_cells(table, column):
    rows = [line.split("|")[1:-1] for line in table.splitlines() if line.startswith("| ") and "---" not in line][1:]
    return [r[0].strip() for r in rows if r[column].strip().startswith("**")]


def test_table_bolds_best_mcd():
    t = render_table([report("A", mcd_db=5.66), report("B", mcd_db=5.66), report("C", mcd_db=5.65)], metrics=("mcd_db",))
    assert "**5.65**" in t
    assert bold_cells(t, 1) == ["C"]


def test_table_bolds_best_f0():
    reps = [report("DNN", "imbalanced", f0_rmse_cent=271.2), report("DGP", "imbalanced", f0_rmse_cent=280.4),
            report("DGPLVM", "imbalanced", f0_rmse_cent=263.9)]
    t = render_table(reps, metrics=("f0_rmse_cent",))
    assert "**264**" in t and "| 271 |" in t
    assert bold_cells(t, 1) == ["DGPLVM"]


def test_single_report_all_bold_and_format():
    t = render_table([report("DNN", mcd_db=5.654, f0_rmse_cent=271.4, dur_rmse_ms=25.64)])
    assert "| DNN | **5.65** | **271** | **25.6** |" in t
    header = t.splitlines()[0]
    assert header == "| Model | balanced MCD | balanced F0 | balanced DUR |"


def test_table_columns_per_situation_and_determinism():
    reps = [report("DNN", "balanced", mcd_db=5.0), report("DNN", "imbalanced", mcd_db=6.0),
            report("DGP", "balanced", mcd_db=4.0)]
    a = render_table(reps, metrics=("mcd_db",))
    assert a == render_table(reps, metrics=("mcd_db",))
    assert a.splitlines()[0] == "| Model | balanced MCD | imbalanced MCD |"
    assert "| DGP | **4.00** | - |" in a


def test_format_precision():
    assert format_metric("mcd_db", 10.0) == "10.0"
    assert format_metric("f0_rmse_cent", 263.5) == "264"
    assert format_metric("dur_rmse_ms", 25.649) == "25.6"


def latent_model(K=3, Q=2, mu=None):
    cond = ConditioningSpec("latent", "all", Q, K)
    m = DgpModel.create(2, 3, [2], 3, stream(0, "lat"), cond)
    if mu is not None:
        m.speaker_latent = SpeakerLatent(Tensor(mu), m.speaker_latent.log_sigma)
    return m


def test_export_latents_schema(tmp_path):
    m = latent_model()
    export_latents(m, tmp_path / "l.csv", tmp_path / "l.svg", groups=[0, 1, 1])
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "speaker_id,group,mu0,mu1,sigma0,sigma1"
    assert len(lines) == 4
    assert lines[2].startswith("1,1,")
    root = ET.parse(tmp_path / "l.svg").getroot()
    circles = [e for e in root.iter() if e.tag.endswith("circle")]
    assert len(circles) == 3


def test_zero_latents_sit_at_the_centre(tmp_path):
    m = latent_model(mu=np.zeros((3, 2)))
    export_latents(m, tmp_path / "l.csv", tmp_path / "l.svg")
    root = ET.parse(tmp_path / "l.svg").getroot()
    size = float(root.get("width"))
    for c in (e for e in root.iter() if e.tag.endswith("circle")):
        assert float(c.get("cx")) == size / 2 and float(c.get("cy")) == size / 2


def test_export_is_deterministic(tmp_path):
    m = latent_model()
    export_latents(m, tmp_path / "a.csv", tmp_path / "a.svg")
    export_latents(m, tmp_path / "b.csv", tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_export_rejects_other_models(tmp_path):
    m = DgpModel.create(2, 3, [2], 3, stream(0, "x"), ConditioningSpec("speaker_code", "all", 0, 3))
    with pytest.raises(WrongModelKind):
        export_latents(m, tmp_path / "l.csv", tmp_path / "l.svg")


@pytest.fixture(scope="module")
def small_corpus():
    return prepare(GeneratorSpec(n_speakers=4, n_utterances=6, frames_per_utterance=20), 0)


def test_reference_system_scores_zero(small_corpus):
    rep = evaluate(System("reference"), small_corpus, "test")
    for key in ("mcd_db", "f0_rmse_cent", "dur_rmse_ms", "rmse"):
        assert rep["aggregate"][key] == 0.0
        assert all(r[key] == 0.0 for r in rep["per_speaker"])
    assert rep["aggregate"]["n_frames"] == int(small_corpus.mask("test").sum())


def test_aggregate_is_frame_weighted(small_corpus):
    from msdgp.config import ModelConfig
    from msdgp.trainer import init_model

    c = small_corpus
    m = init_model(ModelConfig(kind="dgp", hidden_layers=1, width=3, m_hidden=4), 16, 8, 4, stream(0, "i"))
    rep = evaluate(System("dgp", m), c, "train", metrics=("mcd_db", "rmse"))
    rows = rep["per_speaker"]
    w = np.array([r["n_frames"] for r in rows], float)
    for key in ("mcd_db", "rmse"):
        v = np.array([r[key] for r in rows])
        assert np.isclose(rep["aggregate"][key], np.sum(w * v) / w.sum(), rtol=1e-12)
    assert "dur_rmse_ms" not in rep["aggregate"]


def test_report_schema_rejects_negative_metric(small_corpus):
    rep = evaluate(System("reference"), small_corpus, "test")
    rep["aggregate"]["mcd_db"] = -1.0
    with pytest.raises(jsonschema.ValidationError):
        validate_report(rep)


def test_two_cluster_toy_model_separates_groups():
    from msdgp.config import RunConfig
    from msdgp.pipeline import train_system

    spec = GeneratorSpec(n_speakers=6, n_utterances=8, frames_per_utterance=30, group_separation=4.0, group_spread=0.3)
    run = RunConfig.from_dict({
        "seed": 0, "data": spec.to_dict(),
        "model": {"kind": "dgplvm", "hidden_layers": 1, "width": 6, "m_hidden": 16, "latent_dim": 2, "duration_model": False},
        "train": {"epochs": 40, "batch_size": 128},
    })
    corpus = prepare(spec, 0)
    system, _ = train_system(run, corpus)
    mu = system.acoustic.speaker_latent.mu.data
    g = corpus.groups
    cents = [mu[g == k].mean(0) for k in (0, 1)]
    between = np.linalg.norm(cents[0] - cents[1])
    within = np.mean([np.linalg.norm(mu[g == k] - cents[k], axis=1).mean() for k in (0, 1)])
    assert between > within
