"""Desk-scale protocols: model comparison in both situations, latent
dimensionality sweep, layer-feeding ablation and latent cluster recovery.

Each protocol writes a bundle directory with one report JSON per setting,
``tables.md``, ``provenance.json`` and the trained checkpoints.  Settings run
one after another and everything is keyed by the base config and seed, so a
bundle is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from . import __version__
from . import checkpoint
from .config import RunConfig
from .data import Corpus, GeneratorSpec, prepare
from .errors import InvalidConfig
from .eval import evaluate, latent_table, render_table, write_report, export_latents
from .pipeline import train_system

log = logging.getLogger(__name__)

PROTOCOLS = ("balanced", "imbalanced", "dim_sweep", "layer_ablation", "latent_recovery")
COMPARED_KINDS = ("dnn", "dgp", "dgplvm")
SWEEP_DIMS = (2, 3, 16, 64)
LABELS = {"dnn": "DNN", "dgp": "DGP", "dgplvm": "DGPLVM"}


def _with_situation(base: RunConfig, situation: str) -> RunConfig:
    if "path" in base.data:
        raise InvalidConfig("this protocol generates its corpora and needs a generator spec, not a corpus path")
    data = dict(base.data, situation=situation)
    return replace(base, data=GeneratorSpec.from_dict(data).to_dict())


def _with_model(run: RunConfig, **changes) -> RunConfig:
    return replace(run, model=replace(run.model, **changes))


class _Corpora:
    """Generates each (spec, seed) corpus once."""

    def __init__(self, fixed: Corpus | None = None):
        self.fixed = fixed
        self.cache = {}

    def get(self, run: RunConfig) -> Corpus:
        if self.fixed is not None:
            return self.fixed
        key = (json.dumps(run.data, sort_keys=True), run.seed)
        if key not in self.cache:
            self.cache[key] = prepare(run.generator_spec(), run.seed)
        return self.cache[key]


def _settings(name: str, base: RunConfig, replicates: int):
    """Ordered (setting name, row label, run config) triples."""
    if name in ("balanced", "imbalanced"):
        run = _with_situation(base, name)
        return [(kind, LABELS[kind], _with_model(run, kind=kind)) for kind in COMPARED_KINDS]
    if name == "dim_sweep":
        out = []
        for situation in ("balanced", "imbalanced"):
            run = _with_situation(base, situation)
            for q in SWEEP_DIMS:
                out.append((f"{situation}-q{q:02d}", f"Q={q}", _with_model(run, kind="dgplvm", latent_dim=q)))
        return out
    if name == "layer_ablation":
        if base.model.kind == "dnn":
            raise InvalidConfig("layer ablation needs a GP model kind")
        L = base.model.hidden_layers
        if L < 1:
            raise InvalidConfig("layer ablation needs at least one hidden layer")
        out = [(f"feed-{i}", f"layer {i}", _with_model(base, feed_layers=[i])) for i in range(1, L + 1)]
        out.append(("feed-all", "all", _with_model(base, feed_layers="all")))
        return out
    if name == "latent_recovery":
        if replicates < 1:
            raise InvalidConfig("latent_recovery needs at least one replicate")
        out = []
        for r in range(replicates):
            run = replace(_with_model(base, kind="dgplvm", duration_model=False), seed=base.seed + r)
            out.append((f"seed-{base.seed + r}", f"seed {base.seed + r}", run))
        return out
    raise InvalidConfig(f"unknown protocol {name!r}; choose from {PROTOCOLS}")


# ---------------------------------------------------------------------------
# cluster recovery


def cluster_accuracy(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction agreeing under the best one-to-one matching of cluster labels."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    a, b = np.unique(labels), np.unique(truth)
    confusion = np.array([[np.sum((labels == i) & (truth == j)) for j in b] for i in a])
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum() / truth.size)


def score_recovery(mu: np.ndarray, corpus: Corpus, seed: int = 0) -> dict:
    """2-means agreement with the true groups and the centroid-distance order
    of the "similar" and "dissimilar" target speakers."""
    groups = corpus.groups
    G = int(np.unique(groups).size)
    labels = KMeans(n_clusters=G, n_init=10, random_state=seed).fit_predict(mu)
    out = {
        "accuracy": cluster_accuracy(labels, groups),
        "adjusted_rand": float(adjusted_rand_score(groups, labels)),
        "groups": {},
    }
    within, ordered = [], True
    for g in range(G):
        members = groups == g
        centroid = mu[members].mean(axis=0)
        dist = np.linalg.norm(mu - centroid, axis=1)
        within.append(float(dist[members].mean()))
        entry = {"within_mean": within[-1]}
        sim, dis = corpus.targets.get(f"similar_g{g}"), corpus.targets.get(f"dissimilar_g{g}")
        if sim is not None and dis is not None:
            entry.update(similar=int(sim), dissimilar=int(dis),
                         similar_dist=float(dist[sim]), dissimilar_dist=float(dist[dis]))
            ordered = ordered and dist[dis] > dist[sim]
        out["groups"][str(g)] = entry
    centroids = np.array([mu[groups == g].mean(axis=0) for g in range(G)])
    between = [float(np.linalg.norm(centroids[i] - centroids[j])) for i in range(G) for j in range(i + 1, G)]
    out["between_centroid_mean"] = float(np.mean(between)) if between else 0.0
    out["within_mean"] = float(np.mean(within))
    out["ordering_holds"] = bool(ordered)
    return out


# ---------------------------------------------------------------------------
# bundle


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def _tables(name: str, entries) -> str:
    reports = [e["report"] for e in entries]
    parts = [f"# {name}\n"]
    if name == "dim_sweep":
        parts.append(render_table(reports, metrics=("mcd_db", "f0_rmse_cent")))
    else:
        parts.append(render_table(reports))
    parts.append("\n## Normalized RMSE (aggregate over the evaluated speakers)\n\n")
    parts.append(render_table(reports, metrics=("rmse",)))
    if name == "imbalanced":
        agg = {e["report"]["kind"]: e["report"]["aggregate"]["rmse"] for e in entries}
        better = agg["dgplvm"] <= agg["dgp"]
        parts.append(
            f"\nTarget-speaker RMSE: DGPLVM {agg['dgplvm']:.4f}, DGP {agg['dgp']:.4f}; "
            f"DGPLVM <= DGP: {'yes' if better else 'no'}\n"
        )
    if name == "latent_recovery":
        parts.append("\n## Cluster recovery\n\n| Replicate | accuracy | adjusted Rand | ordering holds |\n|---|---:|---:|---|\n")
        for e in entries:
            rec = e["recovery"]
            parts.append(
                f"| {e['setting']} | {rec['accuracy']:.2f} | {rec['adjusted_rand']:.2f} | "
                f"{'yes' if rec['ordering_holds'] else 'no'} |\n"
            )
    return "".join(parts)


def run_protocol(name: str, base: RunConfig, out_dir, replicates: int = 4, corpus: Corpus | None = None,
                 progress=None) -> dict:
    """Run every setting of protocol ``name`` and write the bundle to ``out_dir``.

    Returns a dict with the reports keyed by setting name, the rendered
    tables, the provenance record and (latent_recovery) the recovery scores.
    """
    if name not in PROTOCOLS:
        raise InvalidConfig(f"unknown protocol {name!r}; choose from {PROTOCOLS}")
    settings = _settings(name, base, replicates)
    corpora = _Corpora(corpus if name == "layer_ablation" else None)
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    entries = []
    for setting, label, run in settings:
        log.info("protocol %s: setting %s", name, setting)
        if progress is not None:
            progress(f"{name}: training {setting}")
        data = corpora.get(run)
        system, _ = train_system(run, data)
        ckpt_path = os.path.join(out_dir, "checkpoints", f"{setting}.json")
        checkpoint.save(system, ckpt_path)
        extra = {"setting": setting, "protocol": name}
        if run.model.kind != "dnn" and name == "layer_ablation":
            extra["feed_layers"] = run.model.feed_layers
        if run.model.kind == "dgplvm":
            extra["latent_dim"] = run.model.latent_dim
        report = evaluate(
            system, data, "test", model_id=f"{setting}:{_digest(checkpoint.dumps(system))}", label=label,
            metrics=run.eval.metrics, n_samples=run.eval.n_samples, seed=run.seed, extra=extra,
        )
        entry = {"setting": setting, "report": report}
        if name == "latent_recovery":
            mu, _ = latent_table(system.acoustic)
            entry["recovery"] = score_recovery(mu, data, seed=run.seed)
            export_latents(
                system.acoustic,
                os.path.join(out_dir, f"latents-{setting}.csv"),
                os.path.join(out_dir, f"latents-{setting}.svg"),
                data.groups,
            )
        entries.append(entry)

    for entry in sorted(entries, key=lambda e: e["setting"]):
        write_report(entry["report"], os.path.join(out_dir, f"{entry['setting']}.json"))
    tables = _tables(name, entries)
    with open(os.path.join(out_dir, "tables.md"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(tables)

    provenance = {
        "protocol": name,
        "package_version": __version__,
        "seed": base.seed,
        "base_config": base.resolved().to_dict(),
        "settings": {
            e["setting"]: {"corpus": e["report"]["corpus"], "model": e["report"]["model"]}
            for e in sorted(entries, key=lambda e: e["setting"])
        },
    }
    result = {"reports": {e["setting"]: e["report"] for e in entries}, "tables": tables, "provenance": provenance}
    if name == "latent_recovery":
        scores = {e["setting"]: e["recovery"] for e in entries}
        summary = {
            "replicates": scores,
            "min_accuracy": min(s["accuracy"] for s in scores.values()),
            "ordering_holds_count": sum(s["ordering_holds"] for s in scores.values()),
            "n_replicates": len(scores),
        }
        _dump(summary, os.path.join(out_dir, "latent_recovery.json"))
        provenance["latent_recovery"] = "latent_recovery.json"
        result["recovery"] = summary
    _dump(provenance, os.path.join(out_dir, "provenance.json"))
    return result


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
