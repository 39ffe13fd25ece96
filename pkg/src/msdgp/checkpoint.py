"""Versioned JSON checkpoints.

A checkpoint holds a trained *system*: the acoustic model and, optionally,
the duration model, both of the same kind.  Layout::

    {"format_version": 1,
     "config": {"kind": ..., "architectures": {"acoustic": ..., "duration": ...},
                "duration_stats": {...}, "run": <resolved run config>},
     "params": {"acoustic.layers.0.Z": {"shape": [...], "data": [...]}, ...}}

Keys are sorted and floats are written with ``repr`` (shortest round-trip
decimal), so save -> load -> save is byte-identical.  The ``reference`` kind
carries no parameters; it predicts the ground truth and exists as a test hook
for the evaluation pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .dnn import DnnModel
from .errors import InvalidConfig
from .model import DgpModel
from .trainer import model_kind

FORMAT_VERSION = 1
SYSTEM_KINDS = ("dnn", "dgp", "dgplvm", "reference")
PARTS = ("acoustic", "duration")


@dataclass
class System:
    kind: str
    acoustic: object | None = None
    duration: object | None = None
    duration_stats: dict | None = None
    run_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise InvalidConfig(f"unknown system kind {self.kind!r}")
        if self.kind != "reference":
            if self.acoustic is None:
                raise InvalidConfig("a trained system needs an acoustic model")
            for part in (self.acoustic, self.duration):
                if part is not None and model_kind(part) != self.kind:
                    raise InvalidConfig(f"model kind {model_kind(part)!r} does not match system kind {self.kind!r}")

    def models(self) -> dict:
        return {name: m for name, m in (("acoustic", self.acoustic), ("duration", self.duration)) if m is not None}


def _model_from_architecture(kind: str, arch: dict):
    if kind == "dnn":
        return DnnModel.from_architecture(arch)
    return DgpModel.from_architecture(arch)


def to_document(system: System) -> dict:
    params = {}
    archs = {}
    for part, model in system.models().items():
        archs[part] = model.architecture()
        for name, t in model.parameters().items():
            arr = np.asarray(t.data, dtype=np.float64)
            params[f"{part}.{name}"] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    return {
        "format_version": FORMAT_VERSION,
        "config": {
            "kind": system.kind,
            "architectures": archs,
            "duration_stats": system.duration_stats,
            "run": system.run_config,
        },
        "params": params,
    }


def dumps(system: System) -> str:
    return json.dumps(to_document(system), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save(system: System, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(system))


def from_document(doc: dict) -> System:
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise InvalidConfig("not a checkpoint of a supported format version")
    cfg = doc["config"]
    kind = cfg["kind"]
    raw = doc.get("params", {})
    models = {}
    for part, arch in cfg.get("architectures", {}).items():
        if part not in PARTS:
            raise InvalidConfig(f"unknown checkpoint part {part!r}")
        model = _model_from_architecture(kind, arch)
        prefix = part + "."
        loaded = {}
        for name in model.parameters():
            entry = raw.get(prefix + name)
            if entry is None:
                raise InvalidConfig(f"checkpoint is missing parameter {prefix + name}")
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            loaded[name] = Tensor(arr, requires_grad=True)
        model.set_parameters(loaded)
        models[part] = model
    expected = {f"{p}.{n}" for p, m in models.items() for n in m.parameters()}
    if set(raw) != expected:
        raise InvalidConfig(f"unexpected checkpoint parameters: {sorted(set(raw) - expected)}")
    return System(kind, models.get("acoustic"), models.get("duration"), cfg.get("duration_stats"), cfg.get("run", {}))


def load(path) -> System:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: not valid JSON ({exc})") from None
    return from_document(doc)
