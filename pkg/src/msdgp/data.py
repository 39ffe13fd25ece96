"""Synthetic multi-speaker corpus: generation, splits, normalization and IO.

Each speaker ``k`` has a true embedding ``e_k`` drawn around one of a few
group centres.  Utterances are sequences of segments ("phonemes"); a segment
carries a linguistic vector ``x`` taken from a smooth per-utterance
trajectory and a duration that depends on ``x`` and on the speaker's speaking
rate.  Frame targets are produced by one random two-layer tanh network::

    y = tanh([x, pos, e_k] @ W1 + b1) @ W2 + e_k @ V + noise

The last two output columns play the roles of log-f0 (natural log of Hz)
and a binary voiced flag, the rest stand in for mel-cepstra.

Frame position is ``(t, 1 - t, s, 1 - s)`` with ``t`` the position in the
utterance and ``s`` the position in the segment, both in [0, 1].
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import EmptyTrainSplit, InsufficientData, InvalidSpec
from .rng import stream

FORMAT_VERSION = 1
N_POS = 4
SPLIT_LABELS = ("train", "test", "unused")


@dataclass
class GeneratorSpec:
    n_speakers: int = 10
    n_groups: int = 2
    embedding_dim: int = 2
    group_separation: float = 3.0
    group_spread: float = 0.6
    n_utterances: int = 20
    frames_per_utterance: int = 50
    mean_segment_frames: float = 8.0
    d_x: int = 12
    d_y: int = 8
    hidden_units: int = 16
    noise_std: float = 0.1
    n_test_utterances: int = 2
    situation: str = "balanced"
    target_budget: int = 5
    frame_shift_ms: float = 5.0

    def __post_init__(self):
        errors = []
        if self.n_speakers < 1 or self.n_groups < 1 or self.n_groups > self.n_speakers:
            errors.append("need 1 <= n_groups <= n_speakers")
        if self.embedding_dim < 1:
            errors.append("embedding_dim must be >= 1")
        if self.n_utterances < 1 or self.frames_per_utterance < 2:
            errors.append("need n_utterances >= 1 and frames_per_utterance >= 2")
        if self.d_x < 1 or self.d_y < 3:
            errors.append("need d_x >= 1 and d_y >= 3 (cepstra, log-f0, voicing)")
        if self.noise_std < 0 or self.group_spread < 0 or self.mean_segment_frames < 1:
            errors.append("noise_std and group_spread must be >= 0, mean_segment_frames >= 1")
        if self.situation not in ("balanced", "imbalanced"):
            errors.append(f"unknown situation {self.situation!r}")
        if self.target_budget < 1 or self.n_test_utterances < 0:
            errors.append("target_budget must be >= 1 and n_test_utterances >= 0")
        if errors:
            raise InvalidSpec("; ".join(errors))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Corpus:
    speaker_id: np.ndarray
    utterance_id: np.ndarray
    pos: np.ndarray
    x: np.ndarray
    y: np.ndarray
    spec: GeneratorSpec
    seed: int
    embeddings: np.ndarray
    groups: np.ndarray
    targets: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    norm_stats: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.x.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.spec.n_speakers

    @property
    def normalized(self) -> bool:
        return self.norm_stats is not None

    @property
    def inputs(self) -> np.ndarray:
        """Model input per frame: linguistic features then frame position."""
        return np.hstack([self.x, self.pos])

    def frame_split(self) -> np.ndarray:
        return np.array([self.split.get(int(u), "unused") for u in self.utterance_id])

    def mask(self, label: str) -> np.ndarray:
        return self.frame_split() == label

    def utterances(self, speaker: int) -> list[int]:
        return sorted({int(u) for u in self.utterance_id[self.speaker_id == speaker]})

    def segments(self) -> dict:
        """Segment-level records: speaker, utterance, linguistic x, duration (ms)
        and first frame index.  Durations are in ms regardless of
        normalization; ``normalize`` stores their train mean/std separately."""
        sid, uid, seg_pos = self.speaker_id, self.utterance_id, self.pos[:, 2]
        n = self.n_frames
        if n == 0:
            return {"speaker": sid[:0], "utterance": uid[:0], "x": self.x[:0], "dur_ms": np.zeros(0), "start": sid[:0]}
        start = np.ones(n, dtype=bool)
        start[1:] = (uid[1:] != uid[:-1]) | (seg_pos[1:] <= seg_pos[:-1])
        starts = np.flatnonzero(start)
        lengths = np.diff(np.append(starts, n))
        return {
            "speaker": sid[starts],
            "utterance": uid[starts],
            "x": self.x[starts],
            "dur_ms": lengths * float(self.spec.frame_shift_ms),
            "start": starts,
        }

    def replace(self, **changes) -> "Corpus":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return Corpus(**d)


# ---------------------------------------------------------------------------
# generation


def _group_centres(spec: GeneratorSpec) -> np.ndarray:
    G, Q = spec.n_groups, spec.embedding_dim
    centres = np.zeros((G, Q))
    if G == 1:
        return centres
    r = spec.group_separation / 2.0
    if Q == 1 or G == 2:
        centres[:, 0] = np.linspace(-r, r, G)
    else:
        ang = 2 * np.pi * np.arange(G) / G
        centres[:, 0] = r * np.cos(ang)
        centres[:, 1] = r * np.sin(ang)
    return centres


def choose_targets(embeddings: np.ndarray, groups: np.ndarray) -> dict:
    """Most central ("similar") and most peripheral ("dissimilar") speaker of each group."""
    targets = {}
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        if members.size < 2:
            continue
        centroid = embeddings[members].mean(axis=0)
        dist = np.linalg.norm(embeddings[members] - centroid, axis=1)
        targets[f"similar_g{int(g)}"] = int(members[np.argmin(dist)])
        targets[f"dissimilar_g{int(g)}"] = int(members[np.argmax(dist)])
    return targets


def generate(spec: GeneratorSpec, seed: int = 0) -> Corpus:
    """Draw a corpus; identical (spec, seed) pairs give bitwise-identical output."""
    if not isinstance(spec, GeneratorSpec):
        raise InvalidSpec("generate needs a GeneratorSpec")
    rng = stream(seed, "corpus")
    K, Q, Dx, Dy, H = spec.n_speakers, spec.embedding_dim, spec.d_x, spec.d_y, spec.hidden_units

    groups = np.repeat(np.arange(spec.n_groups), -(-K // spec.n_groups))[:K]
    centres = _group_centres(spec)
    embeddings = centres[groups] + spec.group_spread * rng.standard_normal((K, Q))

    # the random generator network, drawn once per corpus
    d_in = Dx + N_POS + Q
    W1 = rng.standard_normal((d_in, H)) / np.sqrt(d_in)
    W1[Dx + N_POS :] *= 2.0
    b1 = 0.5 * rng.standard_normal(H)
    W2 = rng.standard_normal((H, Dy - 1)) / np.sqrt(H)
    V = rng.standard_normal((Q, Dy - 1)) * 0.5
    V[:, Dy - 2] = 0.0
    f0_axis = np.zeros(Q)
    f0_axis[0] = 0.3
    voice_w = rng.standard_normal(Dx)
    dur_w = rng.standard_normal(Dx) / np.sqrt(Dx)
    rate_w = rng.standard_normal(Q) * 0.15

    T = spec.frames_per_utterance
    seg_x_rows, seg_len_rows, seg_spk, seg_utt = [], [], [], []
    for k in range(K):
        for u in range(spec.n_utterances):
            utt = k * spec.n_utterances + u
            offset = 0.5 * rng.standard_normal(Dx)
            amp = rng.uniform(0.5, 1.5, (2, Dx))
            freq = rng.uniform(0.3, 1.2, (2, Dx))
            phase = rng.uniform(0, 2 * np.pi, (2, Dx))
            total, s = 0, 0
            while total < T:
                xs = offset + np.sum(amp * np.sin(freq * s + phase), axis=0)
                rate = 0.3 * np.tanh(xs @ dur_w) + embeddings[k] @ rate_w
                d = max(1, int(round(spec.mean_segment_frames * np.exp(rate))))
                d = min(d, T - total)
                seg_x_rows.append(xs)
                seg_len_rows.append(d)
                seg_spk.append(k)
                seg_utt.append(utt)
                total += d
                s += 1
    seg_x = np.array(seg_x_rows)
    seg_len = np.array(seg_len_rows)
    voice_score = seg_x @ voice_w
    voice_threshold = np.quantile(voice_score, 0.3)
    seg_voiced = (voice_score > voice_threshold).astype(np.float64)

    n_seg = seg_x.shape[0]
    rep = np.repeat(np.arange(n_seg), seg_len)
    speaker_id = np.asarray(seg_spk, dtype=np.int64)[rep]
    utterance_id = np.asarray(seg_utt, dtype=np.int64)[rep]
    x = seg_x[rep]
    # position inside each segment and each utterance
    seg_start = np.repeat(np.cumsum(seg_len) - seg_len, seg_len)
    within_seg = np.arange(rep.size) - seg_start
    seg_den = np.maximum(seg_len[rep] - 1, 1)
    s_pos = within_seg / seg_den
    t_pos = np.tile(np.arange(T) / (T - 1), K * spec.n_utterances)
    pos = np.stack([t_pos, 1.0 - t_pos, s_pos, 1.0 - s_pos], axis=1)

    e = embeddings[speaker_id]
    hidden = np.tanh(np.hstack([x, pos, e]) @ W1 + b1)
    cont = hidden @ W2 + e @ V
    cont[:, Dy - 2] = np.log(160.0) + e @ f0_axis + 0.15 * cont[:, Dy - 2]
    cont += spec.noise_std * rng.standard_normal(cont.shape) * np.r_[np.ones(Dy - 2), 0.2]
    y = np.hstack([cont, seg_voiced[rep][:, None]])

    return Corpus(
        speaker_id=speaker_id,
        utterance_id=utterance_id,
        pos=pos,
        x=x,
        y=y,
        spec=spec,
        seed=int(seed),
        embeddings=embeddings,
        groups=groups.astype(np.int64),
        targets=choose_targets(embeddings, groups),
    )


# ---------------------------------------------------------------------------
# splits


def make_splits(corpus: Corpus, spec: GeneratorSpec | None = None) -> dict:
    """Utterance -> "train" / "test" / "unused" for the generator's situation.

    Balanced: the last ``n_test_utterances`` of every speaker are test, the
    rest train.  Imbalanced: target speakers train on their first
    ``target_budget`` utterances and are tested on their last
    ``n_test_utterances``; other speakers train as in the balanced case and
    their held-out utterances are unused.
    """
    spec = spec or corpus.spec
    n_test = spec.n_test_utterances
    targets = set(corpus.targets.values())
    split = {}
    for k in range(corpus.n_speakers):
        utts = corpus.utterances(k)
        if len(utts) <= n_test:
            raise InsufficientData(f"speaker {k} has {len(utts)} utterances, needs more than {n_test}")
        held = utts[len(utts) - n_test :]
        rest = utts[: len(utts) - n_test]
        if spec.situation == "imbalanced" and k in targets:
            if spec.target_budget > len(rest):
                raise InsufficientData(
                    f"target speaker {k} has {len(rest)} trainable utterances, budget is {spec.target_budget}"
                )
            for u in rest:
                split[u] = "unused"
            for u in rest[: spec.target_budget]:
                split[u] = "train"
            for u in held:
                split[u] = "test"
        else:
            for u in rest:
                split[u] = "train"
            label = "test" if spec.situation == "balanced" else "unused"
            for u in held:
                split[u] = label
    return split


def oversample_repeats(corpus: Corpus, factor: int, rows: np.ndarray | None = None) -> np.ndarray:
    """Per-row repeat counts: ``factor`` for target speakers in the imbalanced situation."""
    spk = corpus.speaker_id if rows is None else rows
    reps = np.ones(spk.shape[0], dtype=np.intp)
    if corpus.spec.situation == "imbalanced":
        reps[np.isin(spk, list(corpus.targets.values()))] = factor
    return reps


# ---------------------------------------------------------------------------
# normalization

INPUT_LO, INPUT_HI = 0.01, 0.99
STD_FLOOR = 1e-8


def compute_norm_stats(corpus: Corpus) -> dict:
    train = corpus.mask("train")
    if not train.any():
        raise EmptyTrainSplit("no training frames to compute normalization statistics")
    inp = corpus.inputs[train]
    out = corpus.y[train]
    seg = corpus.segments()
    seg_train = np.array([corpus.split.get(int(u)) == "train" for u in seg["utterance"]], dtype=bool)
    dur = seg["dur_ms"][seg_train]
    return {
        "input_min": inp.min(axis=0).tolist(),
        "input_max": inp.max(axis=0).tolist(),
        "output_mean": out.mean(axis=0).tolist(),
        "output_std": np.maximum(out.std(axis=0), STD_FLOOR).tolist(),
        "duration_mean": float(dur.mean()),
        "duration_std": float(max(dur.std(), STD_FLOOR)),
    }


def scale_inputs(values: np.ndarray, stats: dict) -> np.ndarray:
    lo = np.asarray(stats["input_min"])
    hi = np.asarray(stats["input_max"])
    span = hi - lo
    const = span == 0
    scaled = INPUT_LO + (INPUT_HI - INPUT_LO) * (values - lo) / np.where(const, 1.0, span)
    return np.where(const, 0.5, scaled)


def unscale_inputs(values: np.ndarray, stats: dict) -> np.ndarray:
    lo = np.asarray(stats["input_min"])
    hi = np.asarray(stats["input_max"])
    return lo + (values - INPUT_LO) / (INPUT_HI - INPUT_LO) * (hi - lo)


def normalize_outputs(y: np.ndarray, stats: dict) -> np.ndarray:
    return (y - np.asarray(stats["output_mean"])) / np.asarray(stats["output_std"])


def denormalize_outputs(y: np.ndarray, stats: dict) -> np.ndarray:
    return y * np.asarray(stats["output_std"]) + np.asarray(stats["output_mean"])


def normalize(corpus: Corpus) -> Corpus:
    """Scale inputs to [0.01, 0.99] and outputs to zero mean / unit variance.

    Statistics come from training frames only.  Constant input dimensions map
    to 0.5.
    """
    if corpus.normalized:
        return corpus
    stats = compute_norm_stats(corpus)
    inp = scale_inputs(corpus.inputs, stats)
    dx = corpus.x.shape[1]
    return corpus.replace(
        x=inp[:, :dx],
        pos=inp[:, dx:],
        y=normalize_outputs(corpus.y, stats),
        norm_stats=stats,
    )


def prepare(spec: GeneratorSpec, seed: int = 0) -> Corpus:
    """generate + make_splits + normalize."""
    corpus = generate(spec, seed)
    corpus = corpus.replace(split=make_splits(corpus, spec))
    return normalize(corpus)


# ---------------------------------------------------------------------------
# persistence


def _header(dx: int, dy: int) -> list[str]:
    return (
        ["speaker_id", "utterance_id"]
        + [f"pos{i}" for i in range(N_POS)]
        + [f"x{i}" for i in range(dx)]
        + [f"y{i}" for i in range(dy)]
    )


def write_corpus(corpus: Corpus, directory, config: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": corpus.spec.to_dict(),
        "seed": corpus.seed,
        "norm_stats": corpus.norm_stats,
        "split": {str(u): corpus.split[u] for u in sorted(corpus.split)},
        "true_embeddings": corpus.embeddings.tolist(),
        "groups": corpus.groups.tolist(),
        "targets": dict(sorted(corpus.targets.items())),
        "config": config if config is not None else corpus.extra.get("config"),
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    dx, dy = corpus.x.shape[1], corpus.y.shape[1]
    with open(os.path.join(directory, "frames.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(dx, dy))
        sid = corpus.speaker_id.tolist()
        uid = corpus.utterance_id.tolist()
        vals = np.hstack([corpus.pos, corpus.x, corpus.y]).tolist()
        for s, u, row in zip(sid, uid, vals):
            w.writerow([s, u] + [repr(v) for v in row])


def read_corpus(directory) -> Corpus:
    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = GeneratorSpec.from_dict(meta["spec"])
    with open(os.path.join(directory, "frames.csv"), encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != _header(spec.d_x, spec.d_y):
            raise InvalidSpec("frames.csv header does not match the corpus spec")
        rows = list(r)
    n = len(rows)
    ids = np.array([[int(row[0]), int(row[1])] for row in rows], dtype=np.int64).reshape(n, 2)
    vals = np.array([[float(v) for v in row[2:]] for row in rows], dtype=np.float64).reshape(n, -1)
    dx = spec.d_x
    return Corpus(
        speaker_id=ids[:, 0],
        utterance_id=ids[:, 1],
        pos=vals[:, :N_POS],
        x=vals[:, N_POS : N_POS + dx],
        y=vals[:, N_POS + dx :],
        spec=spec,
        seed=int(meta["seed"]),
        embeddings=np.array(meta["true_embeddings"], dtype=np.float64).reshape(spec.n_speakers, spec.embedding_dim),
        groups=np.array(meta["groups"], dtype=np.int64),
        targets=dict(meta["targets"]),
        split={int(u): lab for u, lab in meta["split"].items()},
        norm_stats=meta["norm_stats"],
        extra={"config": meta.get("config")},
    )
