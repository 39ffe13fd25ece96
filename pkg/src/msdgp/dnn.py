"""Feed-forward baseline with speaker codes added at every layer input.

Row-vector form of the recursion, for layers ``l = 0 .. L``::

    h_{l+1} = relu((h_l + S @ WS_l) @ W_{l+1} + b_{l+1})

with ``h_0 = x`` and a linear final layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import InvalidConfig
from .model import speaker_codes

ACTIVATIONS = {"relu": ad.relu, "identity": lambda t: t}


@dataclass
class DnnModel:
    weights: list[Tensor]
    biases: list[Tensor]
    speaker_proj: list[Tensor]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidConfig(f"unknown activation {self.activation!r}")
        if not (len(self.weights) == len(self.biases) == len(self.speaker_proj)):
            raise InvalidConfig("one weight, bias and speaker projection per layer")
        K = self.speaker_proj[0].shape[0]
        for W, b, WS in zip(self.weights, self.biases, self.speaker_proj):
            if WS.shape != (K, W.shape[0]) or b.shape != (W.shape[1],):
                raise InvalidConfig("inconsistent layer shapes")

    @classmethod
    def create(cls, d_x: int, d_y: int, widths, n_speakers: int, rng: np.random.Generator, activation="relu"):
        """Uniform fan-in initialization, zero biases."""
        sizes = [d_x] + [int(w) for w in widths] + [d_y]
        if min(sizes) < 1 or n_speakers < 1:
            raise InvalidConfig("dimensions must be positive")
        weights, biases, proj = [], [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(d_in)
            proj.append(Tensor(rng.uniform(-bound, bound, (n_speakers, d_in)), requires_grad=True))
            weights.append(Tensor(rng.uniform(-bound, bound, (d_in, d_out)), requires_grad=True))
            biases.append(Tensor(np.zeros(d_out), requires_grad=True))
        return cls(weights, biases, proj, activation)

    @property
    def n_speakers(self) -> int:
        return self.speaker_proj[0].shape[0]

    @property
    def d_x(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_y(self) -> int:
        return self.weights[-1].shape[1]

    def architecture(self) -> dict:
        return {
            "d_x": self.d_x,
            "d_y": self.d_y,
            "widths": [W.shape[1] for W in self.weights[:-1]],
            "n_speakers": self.n_speakers,
            "activation": self.activation,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "DnnModel":
        return cls.create(
            arch["d_x"], arch["d_y"], arch["widths"], arch["n_speakers"],
            np.random.default_rng(0), arch.get("activation", "relu"),
        )

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, (W, b, WS) in enumerate(zip(self.weights, self.biases, self.speaker_proj)):
            params[f"layers.{i}.W"] = W
            params[f"layers.{i}.b"] = b
            params[f"layers.{i}.W_speaker"] = WS
        return params

    def set_parameters(self, params: dict) -> None:
        current = self.parameters()
        if set(params) != set(current):
            raise InvalidConfig("parameter names differ")
        get = {}
        for name, value in params.items():
            t = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True)
            if t.shape != current[name].shape:
                raise InvalidConfig(f"{name}: shape {t.shape} != {current[name].shape}")
            get[name] = t
        n = len(self.weights)
        self.weights = [get[f"layers.{i}.W"] for i in range(n)]
        self.biases = [get[f"layers.{i}.b"] for i in range(n)]
        self.speaker_proj = [get[f"layers.{i}.W_speaker"] for i in range(n)]

    def forward(self, X, speakers) -> Tensor:
        h = as_tensor(X)
        S = speaker_codes(speakers, self.n_speakers)
        act = ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (W, b, WS) in enumerate(zip(self.weights, self.biases, self.speaker_proj)):
            h = ad.add(ad.matmul(ad.add(h, ad.matmul(S, WS)), W), b)
            if i < last:
                h = act(h)
        return h

    def predict(self, X, speakers, chunk: int = 8192, **_) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        speakers = np.asarray(speakers)
        parts = [
            self.forward(X[i : i + chunk], speakers[i : i + chunk]).data for i in range(0, X.shape[0], chunk)
        ]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.d_y))


def mse_loss(model: DnnModel, X, Y, speakers) -> Tensor:
    pred = model.forward(X, speakers)
    return ad.square(ad.sub(pred, as_tensor(Y))).mean()
