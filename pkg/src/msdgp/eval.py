"""Objective metrics, evaluation reports, latent export and comparison tables.

Output columns of a synthetic corpus are scored by convention: columns
``0 .. D_y-3`` are mel-cepstra, column ``D_y-2`` is log-f0 (natural log of
Hz) and column ``D_y-1`` is the voiced flag, thresholded at 0.5.
"""

from __future__ import annotations

import csv
import json
import math
import warnings

import jsonschema
import numpy as np

from .data import Corpus, denormalize_outputs
from .errors import NonPositiveF0, ShapeMismatch, WrongModelKind
from .model import DgpModel
from .pipeline import corpus_id, predict_durations, predict_frames, segment_records

MCD_CONST = 10.0 / math.log(10.0)
VOICED_THRESHOLD = 0.5
REPORT_VERSION = 1
METRIC_KEYS = ("mcd_db", "f0_rmse_cent", "dur_rmse_ms", "rmse")
SITUATIONS = ("balanced", "imbalanced")


class EmptyVoicedWarning(UserWarning):
    """No frame is voiced in both reference and prediction."""


# ---------------------------------------------------------------------------
# metrics


def mcd(reference, predicted) -> float:
    """Mean mel-cepstral distance in dB, excluding coefficient 0."""
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    pred = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    if ref.shape != pred.shape:
        raise ShapeMismatch(f"mcd: {ref.shape} vs {pred.shape}")
    if ref.shape[1] < 2:
        raise ShapeMismatch("mcd needs at least two cepstral coefficients")
    if ref.shape[0] == 0:
        return 0.0
    diff = ref[:, 1:] - pred[:, 1:]
    per_frame = MCD_CONST * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(per_frame.mean())


def f0_rmse_cents(reference_f0, predicted_f0, voiced_mask=None) -> float:
    """RMSE of ``1200 * log2(f / f_hat)`` over the voiced frames.

    ``voiced_mask`` marks frames voiced in both sequences (all frames when
    None).  An empty mask gives 0 and an :class:`EmptyVoicedWarning`.
    """
    ref = np.asarray(reference_f0, dtype=np.float64).ravel()
    pred = np.asarray(predicted_f0, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ShapeMismatch(f"f0: {ref.shape} vs {pred.shape}")
    mask = np.ones(ref.shape, dtype=bool) if voiced_mask is None else np.asarray(voiced_mask, dtype=bool).ravel()
    if mask.shape != ref.shape:
        raise ShapeMismatch("voiced mask length differs from f0 length")
    if not mask.any():
        warnings.warn("no frame voiced in both sequences; f0 error defined as 0", EmptyVoicedWarning, stacklevel=2)
        return 0.0
    r, p = ref[mask], pred[mask]
    if np.any(r <= 0) or np.any(p <= 0):
        raise NonPositiveF0("f0 must be positive on voiced frames")
    cents = 1200.0 * np.log2(r / p)
    return float(np.sqrt(np.mean(cents * cents)))


def dur_rmse(reference_ms, predicted_ms) -> float:
    ref = np.asarray(reference_ms, dtype=np.float64).ravel()
    pred = np.asarray(predicted_ms, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ShapeMismatch(f"durations: {ref.shape} vs {pred.shape}")
    if ref.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((ref - pred) ** 2)))


def split_features(y: np.ndarray):
    """(cepstra, f0 in Hz, voiced flags) from denormalized outputs."""
    y = np.atleast_2d(y)
    if y.shape[1] < 3:
        raise ShapeMismatch("need at least 3 output columns (cepstra, log-f0, voicing)")
    return y[:, :-2], np.exp(y[:, -2]), y[:, -1] > VOICED_THRESHOLD


# ---------------------------------------------------------------------------
# reports


def _speaker_metrics(ref_y, pred_y, ref_norm, pred_norm, ref_dur, pred_dur, metrics) -> dict:
    ref_c, ref_f0, ref_v = split_features(ref_y)
    pred_c, pred_f0, pred_v = split_features(pred_y)
    both = ref_v & pred_v
    out = {"n_frames": int(ref_y.shape[0]), "n_segments": int(ref_dur.size), "f0_voiced_frames": int(both.sum())}
    if "mcd_db" in metrics:
        out["mcd_db"] = mcd(ref_c, pred_c)
    if "f0_rmse_cent" in metrics:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyVoicedWarning)
            out["f0_rmse_cent"] = f0_rmse_cents(ref_f0, pred_f0, both)
        out["f0_warning"] = not both.any()
    if "dur_rmse_ms" in metrics and pred_dur is not None:
        out["dur_rmse_ms"] = dur_rmse(ref_dur, pred_dur)
    if "rmse" in metrics:
        d = ref_norm - pred_norm
        out["rmse"] = float(np.sqrt(np.mean(d * d))) if d.size else 0.0
        out["per_dim_rmse"] = np.sqrt(np.mean((ref_y - pred_y) ** 2, axis=0)).tolist() if d.size else []
    return out


def _aggregate(rows: list[dict]) -> dict:
    agg = {
        "n_frames": int(sum(r["n_frames"] for r in rows)),
        "n_segments": int(sum(r["n_segments"] for r in rows)),
    }
    for key in ("mcd_db", "f0_rmse_cent", "rmse"):
        if rows and key in rows[0]:
            w = np.array([r["n_frames"] for r in rows], dtype=np.float64)
            v = np.array([r[key] for r in rows])
            agg[key] = float(np.sum(w * v) / w.sum()) if w.sum() > 0 else 0.0
    if rows and "dur_rmse_ms" in rows[0]:
        w = np.array([r["n_segments"] for r in rows], dtype=np.float64)
        v = np.array([r["dur_rmse_ms"] for r in rows])
        agg["dur_rmse_ms"] = float(np.sum(w * v) / w.sum()) if w.sum() > 0 else 0.0
    return agg


def evaluate(system, corpus: Corpus, split: str = "test", model_id: str | None = None, label: str | None = None,
             metrics=METRIC_KEYS, n_samples=None, seed: int = 0, extra: dict | None = None) -> dict:
    """Per-speaker and frame-weighted aggregate metrics on one split."""
    rows_mask = corpus.mask(split)
    pred_norm = predict_frames(system, corpus, rows_mask, n_samples, seed)
    ref_norm = corpus.y[rows_mask]
    stats = corpus.norm_stats
    ref_y = denormalize_outputs(ref_norm, stats) if stats else ref_norm
    pred_y = denormalize_outputs(pred_norm, stats) if stats else pred_norm
    spk = corpus.speaker_id[rows_mask]

    seg = segment_records(corpus, split)
    seg_pred = predict_durations(system, seg, n_samples, seed) if "dur_rmse_ms" in metrics else None

    roles = {v: k for k, v in corpus.targets.items()}
    per_speaker = []
    for k in sorted(set(spk.tolist())):
        sel = spk == k
        ssel = seg["speaker"] == k
        row = {"speaker_id": int(k), "group": int(corpus.groups[k]), "role": roles.get(int(k))}
        row.update(
            _speaker_metrics(
                ref_y[sel], pred_y[sel], ref_norm[sel], pred_norm[sel], seg["dur_ms"][ssel],
                None if seg_pred is None else seg_pred[ssel], metrics,
            )
        )
        per_speaker.append(row)

    report = {
        "format_version": REPORT_VERSION,
        "model": model_id or system.kind,
        "kind": system.kind,
        "label": label or system.kind.upper(),
        "corpus": corpus_id(corpus),
        "situation": corpus.spec.situation,
        "split": split,
        "seed": int(system.run_config.get("seed", seed)) if system.run_config else int(seed),
        "config": system.run_config,
        "per_speaker": per_speaker,
        "aggregate": _aggregate(per_speaker),
    }
    if extra:
        report.update(extra)
    validate_report(report)
    return report


_METRIC = {"type": "number", "minimum": 0}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "model", "corpus", "split", "per_speaker", "aggregate", "config", "seed"],
    "properties": {
        "format_version": {"const": REPORT_VERSION},
        "model": {"type": "string"},
        "kind": {"type": "string"},
        "label": {"type": "string"},
        "corpus": {"type": "string"},
        "situation": {"enum": list(SITUATIONS)},
        "split": {"enum": ["train", "test", "unused"]},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "per_speaker": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["speaker_id", "n_frames"],
                "properties": {k: _METRIC for k in METRIC_KEYS},
            },
        },
        "aggregate": {
            "type": "object",
            "required": ["n_frames"],
            "properties": {k: _METRIC for k in METRIC_KEYS},
        },
    },
}


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    validate_report(report)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    validate_report(report)
    return report


# ---------------------------------------------------------------------------
# latent export

GROUP_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
SVG_SIZE = 400
SVG_MARGIN = 40


def latent_table(model) -> tuple[np.ndarray, np.ndarray]:
    """(mu, sigma) of the speaker latents; sigma is the standard deviation."""
    if not isinstance(model, DgpModel) or model.speaker_latent is None:
        raise WrongModelKind("latent export needs a model with speaker latents")
    mu = model.speaker_latent.mu.data
    sigma = np.sqrt(np.exp(model.speaker_latent.log_sigma.data))
    return mu, sigma


def _two_cols(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], 2))
    out[:, : min(2, a.shape[1])] = a[:, :2]
    return out


def export_latents(model, out_csv, out_svg, groups=None) -> None:
    """CSV of mu_k / sigma_k (first two dims) and an SVG scatter coloured by group."""
    mu, sigma = latent_table(model)
    K = mu.shape[0]
    groups = np.zeros(K, dtype=int) if groups is None else np.asarray(groups, dtype=int)
    mu2, sig2 = _two_cols(mu), _two_cols(sigma)
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speaker_id", "group", "mu0", "mu1", "sigma0", "sigma1"])
        for k in range(K):
            w.writerow([k, int(groups[k]), repr(float(mu2[k, 0])), repr(float(mu2[k, 1])),
                        repr(float(sig2[k, 0])), repr(float(sig2[k, 1]))])
    with open(out_svg, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_latent_svg(mu2, groups))


def render_latent_svg(mu2: np.ndarray, groups) -> str:
    """Scatter of 2-D points, origin at the centre, symmetric scaling."""
    half = SVG_SIZE / 2.0
    reach = float(np.max(np.abs(mu2))) if mu2.size else 0.0
    scale = (half - SVG_MARGIN) / reach if reach > 0 else 0.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
        f'<line x1="0" y1="{half:.2f}" x2="{SVG_SIZE}" y2="{half:.2f}" stroke="#cccccc"/>',
        f'<line x1="{half:.2f}" y1="0" x2="{half:.2f}" y2="{SVG_SIZE}" stroke="#cccccc"/>',
    ]
    for k, (a, b) in enumerate(mu2):
        cx = half + scale * a
        cy = half - scale * b
        colour = GROUP_COLOURS[int(groups[k]) % len(GROUP_COLOURS)]
        lines.append(
            f'<circle class="speaker" cx="{cx:.2f}" cy="{cy:.2f}" r="5" fill="{colour}">'
            f"<title>speaker {k} group {int(groups[k])}</title></circle>"
        )
        lines.append(f'<text x="{cx + 7:.2f}" y="{cy - 7:.2f}" font-size="10">{k}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# tables

COLUMN_TITLES = {"mcd_db": "MCD", "f0_rmse_cent": "F0", "dur_rmse_ms": "DUR", "rmse": "RMSE"}
DEFAULT_TABLE_METRICS = ("mcd_db", "f0_rmse_cent", "dur_rmse_ms")


def format_metric(key: str, value: float) -> str:
    if key == "f0_rmse_cent":
        return f"{value:.0f}"
    if key == "dur_rmse_ms":
        return f"{value:.1f}"
    # three significant digits, keeping trailing zeros
    if abs(value) >= 999.5:
        return f"{value:.0f}"
    return f"{value:#.3g}".rstrip(".")


def render_table(reports, metrics=DEFAULT_TABLE_METRICS, row_key: str = "label") -> str:
    """Markdown table: one row per model label, metric columns per situation.

    The best (smallest displayed) value of every column is bold; ties are
    all bold.  A trailing comment lists the sources of every row.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("render_table needs at least one report")
    rows = []
    for r in reports:
        if r[row_key] not in rows:
            rows.append(r[row_key])
    situations = [s for s in SITUATIONS if any(r.get("situation") == s for r in reports)]
    extra = sorted({r.get("situation") for r in reports} - set(SITUATIONS) - {None})
    situations += extra or ([] if situations else [None])
    cell = {}
    for r in reports:
        cell[(r[row_key], r.get("situation"))] = r["aggregate"]

    columns = [(s, m) for s in situations for m in metrics]
    text = {}
    best = {}
    for col in columns:
        s, m = col
        shown = {}
        for row in rows:
            agg = cell.get((row, s))
            if agg is not None and m in agg:
                shown[row] = format_metric(m, agg[m])
        text[col] = shown
        if shown:
            lowest = min(float(v) for v in shown.values())
            best[col] = {row for row, v in shown.items() if float(v) == lowest}

    def title(col):
        s, m = col
        return COLUMN_TITLES.get(m, m) if s is None else f"{s} {COLUMN_TITLES.get(m, m)}"

    lines = ["| Model | " + " | ".join(title(c) for c in columns) + " |"]
    lines.append("|---|" + "|".join("---:" for _ in columns) + "|")
    for row in rows:
        cells = []
        for col in columns:
            v = text[col].get(row)
            if v is None:
                cells.append("-")
            elif row in best.get(col, ()):
                cells.append(f"**{v}**")
            else:
                cells.append(v)
        lines.append(f"| {row} | " + " | ".join(cells) + " |")
    lines.append("")
    sources = sorted({(r[row_key], r.get("situation") or "", r["model"], r["corpus"], r.get("seed", 0)) for r in reports})
    for row, s, model, corpus, seed in sources:
        lines.append(f"<!-- {row} {s}: model={model} corpus={corpus} seed={seed} -->")
    return "\n".join(lines) + "\n"
