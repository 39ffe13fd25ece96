"""Minibatch Adam training for the DGP models and the DNN baseline."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import GradTape, Tensor, grad
from .dnn import DnnModel, mse_loss
from .errors import DivergenceDetected, InvalidConfig
from .model import ConditioningSpec, DgpModel, elbo
from .rng import stream

log = logging.getLogger(__name__)

KIND_DEFAULTS = {
    "dgp": {"epochs": 50, "learning_rate": 0.01},
    "dgplvm": {"epochs": 50, "learning_rate": 0.01},
    "dnn": {"epochs": 100, "learning_rate": 1e-4},
}


@dataclass
class TrainConfig:
    batch_size: int = 1024
    epochs: int | None = None
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    n_samples: int = 1
    seed: int = 0
    oversample_factor: int = 20

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.n_samples < 1 or self.oversample_factor < 1:
            raise InvalidConfig("n_samples and oversample_factor must be >= 1")

    def resolved(self, kind: str) -> "TrainConfig":
        """Copy with epochs / learning rate filled in from the model kind."""
        defaults = KIND_DEFAULTS[kind]
        return replace(
            self,
            epochs=defaults["epochs"] if self.epochs is None else self.epochs,
            learning_rate=defaults["learning_rate"] if self.learning_rate is None else self.learning_rate,
        )


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update (descending ``grads``).

    Pure: returns ``(new_params, new_state)`` as plain numpy arrays and leaves
    the inputs untouched.
    """
    lr = config.learning_rate if config.learning_rate is not None else KIND_DEFAULTS["dgp"]["learning_rate"]
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        p = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# model construction


def init_model(config, d_x: int, d_y: int, n_speakers: int, rng: np.random.Generator):
    """Freshly initialized model for a :class:`~msdgp.config.ModelConfig`."""
    widths = config.resolved_widths()
    if config.kind == "dnn":
        return DnnModel.create(d_x, d_y, widths, n_speakers, rng)
    if config.kind == "dgp":
        cond = ConditioningSpec(config.conditioning_mode(), config.feed_layers, 0, n_speakers)
    elif config.kind == "dgplvm":
        cond = ConditioningSpec("latent", config.feed_layers, config.latent_dim, n_speakers)
    else:
        raise InvalidConfig(f"unknown model kind {config.kind!r}")
    return DgpModel.create(
        d_x, d_y, widths, config.m_hidden, rng, cond, num_inducing_speaker=config.m_speaker
    )


def model_kind(model) -> str:
    if isinstance(model, DnnModel):
        return "dnn"
    return "dgplvm" if model.conditioning.mode == "latent" else "dgp"


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainData:
    X: np.ndarray
    Y: np.ndarray
    speakers: np.ndarray
    repeats: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.speakers = np.asarray(self.speakers, dtype=np.intp)
        n = self.X.shape[0]
        if self.Y.shape[0] != n or self.speakers.shape != (n,):
            raise ValueError("X, Y and speakers must have the same number of rows")
        if self.repeats is None:
            self.repeats = np.ones(n, dtype=np.intp)
        self.repeats = np.asarray(self.repeats, dtype=np.intp)

    def epoch_index(self) -> np.ndarray:
        """Row indices of one epoch, with oversampled rows replicated."""
        return np.repeat(np.arange(self.X.shape[0]), self.repeats)


@dataclass
class TraceRow:
    epoch: int
    objective: float
    wall_ms: float


def _objective(model, X, Y, spk, n_total, config, mc_rng):
    """Scalar to minimize and the value reported in the trace."""
    if isinstance(model, DnnModel):
        loss = mse_loss(model, X, Y, spk)
        return loss, loss.item()
    bound = elbo(model, X, Y, spk, n_total, config.n_samples, mc_rng)
    return -bound, bound.item()


def train(model, data: TrainData, config: TrainConfig, progress=None, stream_prefix: str = ""):
    """Train a copy of ``model``; returns ``(trained_model, trace)``.

    Each epoch shuffles the (oversampled) frame indices with the seeded
    shuffle stream and takes Adam steps on consecutive batches.  The trace
    holds the mean minibatch objective per epoch: the ELBO estimate for GP
    models, the MSE for the DNN.  ``stream_prefix`` keeps the random streams
    of several models trained under one seed apart.
    """
    config = config.resolved(model_kind(model))
    model = copy.deepcopy(model)
    shuffle_rng = stream(config.seed, stream_prefix + "shuffle")
    mc_rng = stream(config.seed, stream_prefix + "monte-carlo")
    index = data.epoch_index()
    n_total = index.size
    if n_total == 0 and config.epochs > 0:
        raise InvalidConfig("no training rows")
    state = AdamState()
    trace: list[TraceRow] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(index)
        values = []
        for start in range(0, n_total, config.batch_size):
            rows = order[start : start + config.batch_size]
            params = model.parameters()
            with GradTape():
                loss, value = _objective(
                    model, data.X[rows], data.Y[rows], data.speakers[rows], n_total, config, mc_rng
                )
            if not np.isfinite(value):
                raise DivergenceDetected(f"non-finite objective at epoch {epoch}")
            grads = grad(loss, params)
            if not all(np.all(np.isfinite(g.data)) for g in grads.values()):
                raise DivergenceDetected(f"non-finite gradient at epoch {epoch}")
            new_params, state = adam_step(params, grads, state, config)
            model.set_parameters({k: Tensor(v, requires_grad=True) for k, v in new_params.items()})
            values.append(value)
        row = TraceRow(epoch, float(np.mean(values)), (time.perf_counter() - t0) * 1000.0)
        trace.append(row)
        log.info("epoch %d objective %.6g (%.0f ms)", epoch, row.objective, row.wall_ms)
        if progress is not None:
            progress(row)
    return model, trace


def write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,objective,wall_ms\n")
        for row in trace:
            fh.write(f"{row.epoch},{row.objective!r},{row.wall_ms:.3f}\n")
