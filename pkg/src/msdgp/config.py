"""Run configuration: one JSON document with data, model, train, eval and seed.

Unknown keys are rejected in every section.  ``RunConfig.resolved()`` fills
kind-dependent defaults so artifacts can embed the exact settings used.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .data import GeneratorSpec
from .errors import InvalidConfig, InvalidSpec
from .trainer import TrainConfig

KINDS = ("dnn", "dgp", "dgplvm")
METRICS = ("mcd_db", "f0_rmse_cent", "dur_rmse_ms", "rmse")

DEFAULT_WIDTH = {"dnn": 128, "dgp": 8, "dgplvm": 8}
DEFAULT_DURATION_WIDTH = {"dnn": 32, "dgp": 4, "dgplvm": 4}


def _strict(cls, d, section: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise InvalidConfig(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise InvalidConfig(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise InvalidConfig(f"bad {section!r} section: {exc}") from None


@dataclass
class ModelConfig:
    kind: str = "dgplvm"
    hidden_layers: int = 2
    width: int | None = None
    m_hidden: int = 32
    m_speaker: int = 8
    latent_dim: int = 3
    feed_layers: object = "all"
    speaker_conditioning: bool = True
    duration_model: bool = True
    duration_hidden_layers: int = 2
    duration_width: int | None = None
    duration_m_hidden: int = 16

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.hidden_layers < 0 or self.duration_hidden_layers < 0:
            raise InvalidConfig("hidden_layers must be >= 0")
        if self.m_hidden < 1 or self.m_speaker < 1 or self.duration_m_hidden < 1:
            raise InvalidConfig("inducing-point counts must be >= 1")
        if self.kind == "dgplvm" and self.latent_dim < 1:
            raise InvalidConfig("dgplvm needs latent_dim >= 1")
        if self.feed_layers != "all":
            if not isinstance(self.feed_layers, (list, tuple)) or not self.feed_layers:
                raise InvalidConfig('feed_layers must be "all" or a non-empty list of layer indices')
            self.feed_layers = [int(i) for i in self.feed_layers]
            bad = [i for i in self.feed_layers if not 1 <= i <= self.hidden_layers]
            if bad:
                raise InvalidConfig(f"feed_layers {bad} outside hidden layers 1..{self.hidden_layers}")

    def resolved_widths(self) -> list[int]:
        w = self.width if self.width is not None else DEFAULT_WIDTH[self.kind]
        return [int(w)] * self.hidden_layers

    def conditioning_mode(self) -> str:
        if self.kind == "dgplvm":
            return "latent"
        if self.kind == "dgp" and self.speaker_conditioning:
            return "speaker_code"
        return "none"

    def for_duration(self) -> "ModelConfig":
        """Config of the companion duration model (all hidden layers fed)."""
        width = self.duration_width if self.duration_width is not None else DEFAULT_DURATION_WIDTH[self.kind]
        return replace(
            self,
            hidden_layers=self.duration_hidden_layers,
            width=width,
            m_hidden=self.duration_m_hidden,
            feed_layers="all",
        )

    def resolved(self) -> "ModelConfig":
        return replace(
            self,
            width=self.resolved_widths()[0] if self.hidden_layers else (self.width or DEFAULT_WIDTH[self.kind]),
            duration_width=self.for_duration().width,
        )


@dataclass
class EvalConfig:
    metrics: list = field(default_factory=lambda: list(METRICS))
    n_samples: int | None = None

    def __post_init__(self):
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise InvalidConfig(f"unknown metrics {bad}; choose from {METRICS}")
        if self.n_samples is not None and self.n_samples < 1:
            raise InvalidConfig("eval n_samples must be >= 1 or null")


@dataclass
class RunConfig:
    seed: int = 0
    data: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise InvalidConfig("config must be a JSON object")
        unknown = set(d) - {"seed", "data", "model", "train", "eval"}
        if unknown:
            raise InvalidConfig(f"unknown top-level keys: {sorted(unknown)}")
        data = d.get("data") or {}
        if "path" in data:
            if set(data) != {"path"}:
                raise InvalidConfig("data section with 'path' takes no other keys")
        else:
            try:
                data = GeneratorSpec.from_dict(data).to_dict()
            except InvalidSpec as exc:
                raise InvalidConfig(str(exc)) from None
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise InvalidConfig("seed must be an integer")
        train = _strict(TrainConfig, d.get("train"), "train")
        return cls(
            seed=seed,
            data=data,
            model=_strict(ModelConfig, d.get("model"), "model"),
            train=train,
            eval=_strict(EvalConfig, d.get("eval"), "eval"),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)

    def generator_spec(self) -> GeneratorSpec:
        if "path" in self.data:
            raise InvalidConfig("config points at a corpus path, not a generator spec")
        return GeneratorSpec.from_dict(self.data)

    def resolved(self) -> "RunConfig":
        train = replace(self.train.resolved(self.model.kind), seed=self.seed)
        return replace(self, model=self.model.resolved(), train=train)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": dict(self.data),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "eval": asdict(self.eval),
        }
