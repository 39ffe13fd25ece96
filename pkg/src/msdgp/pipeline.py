"""Glue between corpora, run configs and models.

A system is trained in two parts that share one model kind: the acoustic
model maps ``[x, pos]`` of each frame to normalized ``y``; the duration model
maps the linguistic vector of each segment to its standardized duration.
Target speakers in the imbalanced situation are oversampled in both.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from .checkpoint import System
from .config import RunConfig
from .data import Corpus, oversample_repeats
from .errors import EmptyTrainSplit, InvalidConfig
from .rng import stream
from .trainer import TrainData, init_model, train

log = logging.getLogger(__name__)


def corpus_id(corpus: Corpus) -> str:
    """Content hash of a corpus (frames, splits and spec)."""
    h = hashlib.sha256()
    for arr in (corpus.speaker_id, corpus.utterance_id, corpus.pos, corpus.x, corpus.y):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(sorted(corpus.split.items())).encode())
    h.update(repr(sorted(corpus.spec.to_dict().items())).encode())
    return f"synthetic-s{corpus.seed}-{h.hexdigest()[:12]}"


def segment_records(corpus: Corpus, label: str | None = None) -> dict:
    """Segments, optionally restricted to utterances carrying ``label``."""
    seg = corpus.segments()
    if label is None:
        return seg
    keep = np.array([corpus.split.get(int(u)) == label for u in seg["utterance"]], dtype=bool)
    return {k: v[keep] for k, v in seg.items()}


def acoustic_data(corpus: Corpus, factor: int) -> TrainData:
    train_rows = corpus.mask("train")
    if not train_rows.any():
        raise EmptyTrainSplit("no training frames")
    spk = corpus.speaker_id[train_rows]
    return TrainData(
        corpus.inputs[train_rows], corpus.y[train_rows], spk, oversample_repeats(corpus, factor, spk)
    )


def duration_data(corpus: Corpus, factor: int) -> TrainData:
    seg = segment_records(corpus, "train")
    if seg["dur_ms"].size == 0:
        raise EmptyTrainSplit("no training segments")
    stats = corpus.norm_stats
    target = (seg["dur_ms"] - stats["duration_mean"]) / stats["duration_std"]
    return TrainData(seg["x"], target[:, None], seg["speaker"], oversample_repeats(corpus, factor, seg["speaker"]))


def train_system(run: RunConfig, corpus: Corpus, progress=None):
    """Train acoustic (and duration) models; returns ``(System, traces)``."""
    if not corpus.normalized:
        raise InvalidConfig("corpus must be normalized before training")
    run = run.resolved()
    cfg = run.model
    tcfg = run.train
    K = corpus.n_speakers
    traces = {}

    data = acoustic_data(corpus, tcfg.oversample_factor)
    model = init_model(cfg, data.X.shape[1], data.Y.shape[1], K, stream(run.seed, "init-acoustic"))
    log.info("training %s acoustic model on %d frames", cfg.kind, data.X.shape[0])
    acoustic, traces["acoustic"] = train(model, data, tcfg, progress)

    duration = None
    if cfg.duration_model:
        dcfg = cfg.for_duration()
        ddata = duration_data(corpus, tcfg.oversample_factor)
        dmodel = init_model(dcfg, ddata.X.shape[1], 1, K, stream(run.seed, "init-duration"))
        log.info("training %s duration model on %d segments", cfg.kind, ddata.X.shape[0])
        duration, traces["duration"] = train(dmodel, ddata, tcfg, progress, stream_prefix="duration-")

    stats = corpus.norm_stats
    system = System(
        cfg.kind,
        acoustic,
        duration,
        {"mean": stats["duration_mean"], "std": stats["duration_std"]},
        run.to_dict(),
    )
    return system, traces


def _predict(model, X, speakers, n_samples, seed, name):
    if n_samples is None:
        return model.predict(X, speakers)
    return model.predict(X, speakers, n_samples=n_samples, rng=stream(seed, name))


def predict_frames(system: System, corpus: Corpus, rows: np.ndarray, n_samples=None, seed: int = 0) -> np.ndarray:
    """Normalized acoustic predictions for the selected frames."""
    if system.kind == "reference":
        return corpus.y[rows].copy()
    return _predict(system.acoustic, corpus.inputs[rows], corpus.speaker_id[rows], n_samples, seed, "eval-acoustic")


def predict_durations(system: System, seg: dict, n_samples=None, seed: int = 0) -> np.ndarray | None:
    """Predicted segment durations in ms, or None without a duration model."""
    if system.kind == "reference":
        return seg["dur_ms"].astype(np.float64).copy()
    if system.duration is None:
        return None
    z = _predict(system.duration, seg["x"], seg["speaker"], n_samples, seed, "eval-duration")[:, 0]
    return z * system.duration_stats["std"] + system.duration_stats["mean"]
