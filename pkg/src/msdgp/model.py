"""Deep GP models for multi-speaker regression.

Three conditioning modes share one layer stack ``f^1 .. f^{L+1}``:

``none``
    plain DGP, ``h^l = f^l(h^{l-1})``.
``speaker_code``
    an auxiliary speaker GP maps the one-hot code into each fed hidden layer,
    ``h^l = f^l(h^{l-1}) + f_S^l(code)``.
``latent``
    every speaker owns a latent vector ``r_k`` with ``q(r_k) = N(mu_k, diag)``
    and prior ``N(0, I)``; fed layers see ``[h^{l-1}, r_k]`` as input.

Training maximizes the minibatch estimator of the evidence lower bound: the
expected log-likelihood is scaled by ``N_total / B`` and every KL term is
counted once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import IndexOutOfRange, InvalidConfig
from .gp_layer import GpLayer
from .kernel import KERNEL_ORDER

MODES = ("none", "speaker_code", "latent")
LOG_2PI = float(np.log(2.0 * np.pi))


def speaker_code(k: int, n_speakers: int) -> np.ndarray:
    """One-hot vector of length ``n_speakers`` with a 1 at ``k``."""
    if not 0 <= k < n_speakers:
        raise IndexOutOfRange(f"speaker {k} outside [0, {n_speakers})")
    code = np.zeros(n_speakers)
    code[k] = 1.0
    return code


def speaker_codes(speakers, n_speakers: int) -> np.ndarray:
    speakers = np.asarray(speakers, dtype=np.intp)
    if speakers.size and (speakers.min() < 0 or speakers.max() >= n_speakers):
        raise IndexOutOfRange(f"speaker index outside [0, {n_speakers})")
    return np.eye(n_speakers)[speakers]


@dataclass
class ConditioningSpec:
    mode: str = "none"
    feed_layers: object = "all"
    latent_dim: int = 0
    n_speakers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown conditioning mode {self.mode!r}")
        if self.n_speakers < 1:
            raise InvalidConfig("n_speakers must be positive")
        if self.mode == "latent" and self.latent_dim < 1:
            raise InvalidConfig("latent mode needs latent_dim >= 1")
        if self.feed_layers != "all":
            self.feed_layers = tuple(sorted(int(i) for i in self.feed_layers))

    def layers(self, n_hidden: int) -> tuple[int, ...]:
        """Resolved 1-based hidden-layer indices that receive speaker information."""
        if self.mode == "none":
            return ()
        if self.feed_layers == "all":
            return tuple(range(1, n_hidden + 1))
        bad = [i for i in self.feed_layers if not 1 <= i <= n_hidden]
        if bad:
            raise InvalidConfig(f"feed_layers {bad} outside hidden layers 1..{n_hidden}")
        return self.feed_layers

    def to_dict(self) -> dict:
        feed = self.feed_layers if self.feed_layers == "all" else list(self.feed_layers)
        return {
            "mode": self.mode,
            "feed_layers": feed,
            "latent_dim": self.latent_dim,
            "n_speakers": self.n_speakers,
        }


@dataclass
class SpeakerLatent:
    """Variational posterior over per-speaker latent vectors.

    ``log_sigma`` holds the log of the diagonal of each covariance.
    """

    mu: Tensor
    log_sigma: Tensor

    @classmethod
    def create(cls, n_speakers: int, dim: int, rng: np.random.Generator, init_variance: float = 1e-4):
        mu = rng.standard_normal((n_speakers, dim)) * np.sqrt(init_variance)
        log_sigma = np.full((n_speakers, dim), np.log(init_variance))
        return cls(Tensor(mu, requires_grad=True), Tensor(log_sigma, requires_grad=True))

    def kl_to_prior(self) -> Tensor:
        """sum_k KL[N(mu_k, diag sigma_k) || N(0, I)]."""
        ls = self.log_sigma
        terms = ad.add(ad.sub(ad.add(ad.exp(ls), ad.square(self.mu)), 1.0), ad.neg(ls))
        return 0.5 * terms.sum()

    def sample(self, n_samples: int, rng: np.random.Generator) -> Tensor:
        """``n_samples`` x K x Q draws, one per speaker per sample."""
        eps = rng.standard_normal((n_samples,) + self.mu.shape)
        return ad.add(self.mu, ad.mul(ad.exp(0.5 * self.log_sigma), eps))


@dataclass
class DgpModel:
    hidden_layers: list[GpLayer]
    noise_log_var: Tensor
    conditioning: ConditioningSpec = field(default_factory=ConditioningSpec)
    speaker_layers: dict[int, GpLayer] = field(default_factory=dict)
    speaker_latent: SpeakerLatent | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mode = self.conditioning.mode
        if (mode == "speaker_code") != bool(self.speaker_layers):
            raise InvalidConfig("speaker GPs are present iff mode is speaker_code")
        if (mode == "latent") != (self.speaker_latent is not None):
            raise InvalidConfig("speaker latents are present iff mode is latent")
        fed = self.feed
        q = self.conditioning.latent_dim if mode == "latent" else 0
        prev = self.hidden_layers[0].d_in - (q if 1 in fed else 0)
        for i, layer in enumerate(self.hidden_layers, 1):
            expect = prev + (q if i in fed else 0)
            if layer.d_in != expect:
                raise InvalidConfig(f"layer {i} expects input dim {expect}, has {layer.d_in}")
            prev = layer.d_out
        for i, sl in self.speaker_layers.items():
            if sl.d_in != self.conditioning.n_speakers or sl.d_out != self.hidden_layers[i - 1].d_out:
                raise InvalidConfig(f"speaker GP {i} has wrong dimensions")

    @classmethod
    def create(
        cls,
        d_x: int,
        d_y: int,
        widths,
        num_inducing: int,
        rng: np.random.Generator,
        conditioning: ConditioningSpec | None = None,
        num_inducing_speaker: int = 8,
        kernel_variance: float = 1.0,
        noise_variance: float = 0.01,
        hidden_q_variance: float = 1e-6,
        output_q_variance: float = 1.0,
        latent_init_variance: float = 1e-4,
    ) -> "DgpModel":
        """Build a freshly initialized model.

        Inducing inputs are standard normal, variational means zero,
        variational covariances ``hidden_q_variance * I`` for hidden and
        speaker GPs and ``output_q_variance * I`` for the output GP.
        """
        conditioning = conditioning or ConditioningSpec()
        widths = [int(w) for w in widths]
        if np.ndim(num_inducing) == 0:
            ms = [int(num_inducing)] * (len(widths) + 1)
        else:
            ms = [int(m) for m in num_inducing]
        if len(ms) != len(widths) + 1:
            raise InvalidConfig("need one inducing count per layer")
        if d_x < 1 or d_y < 1 or any(w < 1 for w in widths) or min(ms) < 1:
            raise InvalidConfig("dimensions must be positive")
        if conditioning.mode != "none" and not widths:
            raise InvalidConfig("speaker conditioning needs at least one hidden layer")
        fed = conditioning.layers(len(widths))
        q = conditioning.latent_dim if conditioning.mode == "latent" else 0
        layers = []
        prev = d_x
        for i, w in enumerate(widths, 1):
            d_in = prev + (q if i in fed else 0)
            layers.append(
                GpLayer.create(d_in, w, ms[i - 1], rng, hidden_q_variance, "identity", kernel_variance)
            )
            prev = w
        layers.append(GpLayer.create(prev, d_y, ms[-1], rng, output_q_variance, "zero", kernel_variance))
        speaker_layers = {}
        if conditioning.mode == "speaker_code":
            for i in fed:
                speaker_layers[i] = GpLayer.create(
                    conditioning.n_speakers, widths[i - 1], num_inducing_speaker, rng,
                    hidden_q_variance, "zero", kernel_variance,
                )
        latent = None
        if conditioning.mode == "latent":
            latent = SpeakerLatent.create(conditioning.n_speakers, q, rng, latent_init_variance)
        noise = Tensor(np.full(d_y, np.log(noise_variance)), requires_grad=True)
        return cls(layers, noise, conditioning, speaker_layers, latent)

    # -- structure -------------------------------------------------------

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_layers) - 1

    @property
    def feed(self) -> tuple[int, ...]:
        return self.conditioning.layers(self.n_hidden)

    @property
    def d_x(self) -> int:
        first = self.hidden_layers[0].d_in
        if self.conditioning.mode == "latent" and 1 in self.feed:
            first -= self.conditioning.latent_dim
        return first

    @property
    def d_y(self) -> int:
        return self.hidden_layers[-1].d_out

    def architecture(self) -> dict:
        return {
            "d_x": self.d_x,
            "d_y": self.d_y,
            "widths": [layer.d_out for layer in self.hidden_layers[:-1]],
            "num_inducing": [layer.num_inducing for layer in self.hidden_layers],
            "num_inducing_speaker": {str(i): sl.num_inducing for i, sl in sorted(self.speaker_layers.items())},
            "conditioning": self.conditioning.to_dict(),
            "kernel": {"family": "arccos", "order": KERNEL_ORDER},
            "mean_functions": [layer.mean_fn for layer in self.hidden_layers],
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "DgpModel":
        """Empty-shell model with the recorded shapes; parameters are placeholders."""
        if arch.get("kernel", {}).get("order", KERNEL_ORDER) != KERNEL_ORDER:
            raise InvalidConfig("unsupported arc-cosine kernel order")
        cond = ConditioningSpec(**arch["conditioning"])
        rng = np.random.default_rng(0)
        return cls.create(
            arch["d_x"], arch["d_y"], arch["widths"], arch["num_inducing"], rng, cond,
            num_inducing_speaker=next(iter(arch["num_inducing_speaker"].values()), 8),
        )

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.hidden_layers):
            for k, v in layer.parameters().items():
                params[f"layers.{i}.{k}"] = v
        for i, sl in sorted(self.speaker_layers.items()):
            for k, v in sl.parameters().items():
                params[f"speaker_layers.{i}.{k}"] = v
        if self.speaker_latent is not None:
            params["latent.mu"] = self.speaker_latent.mu
            params["latent.log_sigma"] = self.speaker_latent.log_sigma
        params["likelihood.log_noise"] = self.noise_log_var
        return params

    def set_parameters(self, params: dict) -> None:
        current = self.parameters()
        if set(params) != set(current):
            raise InvalidConfig(f"parameter names differ: {sorted(set(params) ^ set(current))}")
        new = {}
        for name, value in params.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            if arr.shape != current[name].shape:
                raise InvalidConfig(f"{name}: shape {arr.shape} != {current[name].shape}")
            new[name] = value if isinstance(value, Tensor) else Tensor(arr, requires_grad=True)
        for i, layer in enumerate(self.hidden_layers):
            layer.set_parameters({k: new[f"layers.{i}.{k}"] for k in layer.parameters()})
        for i, sl in self.speaker_layers.items():
            sl.set_parameters({k: new[f"speaker_layers.{i}.{k}"] for k in sl.parameters()})
        if self.speaker_latent is not None:
            self.speaker_latent = SpeakerLatent(new["latent.mu"], new["latent.log_sigma"])
        self.noise_log_var = new["likelihood.log_noise"]

    # -- evaluation ------------------------------------------------------

    def _factors(self):
        hidden = [layer.prior_factor() for layer in self.hidden_layers]
        speaker = {i: sl.prior_factor() for i, sl in self.speaker_layers.items()}
        return hidden, speaker

    def _propagate(self, X, speakers, n_samples, stochastic, rng, factors=None):
        """Final-layer (mean, var), each of shape (n_samples * B) x D_y."""
        X = as_tensor(X)
        speakers = np.asarray(speakers, dtype=np.intp)
        B = X.shape[0]
        if speakers.shape != (B,):
            raise ValueError("need one speaker index per row")
        K = self.conditioning.n_speakers
        if speakers.size and (speakers.min() < 0 or speakers.max() >= K):
            raise IndexOutOfRange(f"speaker index outside [0, {K})")
        if factors is None:
            factors = self._factors()
        hidden_f, speaker_f = factors
        S = n_samples if stochastic else 1
        H = X if S == 1 else Tensor._wrap(np.tile(X.data, (S, 1)))
        spk = np.tile(speakers, S)
        mode = self.conditioning.mode
        fed = self.feed

        r = None
        if mode == "latent":
            if stochastic:
                draws = self.speaker_latent.sample(S, rng)  # S x K x Q
                flat = ad.reshape(draws, (S * K, -1))
                r = ad.take_rows(flat, np.repeat(np.arange(S), B) * K + spk)
            else:
                r = ad.take_rows(self.speaker_latent.mu, spk)

        codes = None
        if mode == "speaker_code":
            codes = np.eye(K)

        for i, layer in enumerate(self.hidden_layers[:-1], 1):
            inp = ad.concat([H, r], axis=1) if (r is not None and i in fed) else H
            if stochastic:
                H = layer.sample_output(inp, rng, hidden_f[i - 1])
            else:
                H, _ = layer.conditional(inp, hidden_f[i - 1])
            if codes is not None and i in fed:
                sl = self.speaker_layers[i]
                s_mean, s_var = sl.conditional(codes, speaker_f[i])
                offset = ad.take_rows(s_mean, spk)
                if stochastic:
                    eps = rng.standard_normal(offset.shape)
                    offset = ad.add(offset, ad.mul(ad.sqrt(ad.take_rows(s_var, spk)), eps))
                H = ad.add(H, offset)

        out_layer = self.hidden_layers[-1]
        return out_layer.conditional(H, hidden_f[-1])

    def forward(self, X, speakers, n_samples: int = 1, stochastic: bool = True, rng=None) -> Tensor:
        """Predictions of shape N_s x B x D_y.

        Stochastic mode samples every layer (including the output layer) by
        reparameterization; mean-field mode propagates conditional means and
        returns a single slice.
        """
        if stochastic and rng is None:
            raise ValueError("stochastic forward needs an rng")
        mean, var = self._propagate(X, speakers, n_samples, stochastic, rng)
        S = n_samples if stochastic else 1
        out = mean
        if stochastic:
            out = ad.add(mean, ad.mul(ad.sqrt(var), rng.standard_normal(mean.shape)))
        return ad.reshape(out, (S, -1, self.d_y))

    def predict(self, X, speakers, n_samples: int | None = None, rng=None, chunk: int = 4096) -> np.ndarray:
        """B x D_y point predictions.

        By default conditional means are propagated through all layers with
        ``mu_k`` for latents.  With ``n_samples`` the final-layer means of that
        many stochastic passes are averaged instead.
        """
        X = np.asarray(X, dtype=np.float64)
        speakers = np.asarray(speakers, dtype=np.intp)
        factors = self._factors()
        out = []
        for start in range(0, X.shape[0], chunk):
            xb, sb = X[start : start + chunk], speakers[start : start + chunk]
            if n_samples is None:
                mean, _ = self._propagate(xb, sb, 1, False, None, factors)
                out.append(mean.data)
            else:
                mean, _ = self._propagate(xb, sb, n_samples, True, rng, factors)
                out.append(mean.data.reshape(n_samples, -1, self.d_y).mean(axis=0))
        if not out:
            return np.zeros((0, self.d_y))
        return np.concatenate(out, axis=0)

    def kl_terms(self, factors=None) -> Tensor:
        hidden_f, speaker_f = factors or self._factors()
        kl = Tensor._wrap(np.array(0.0))
        for layer, Lz in zip(self.hidden_layers, hidden_f):
            kl = ad.add(kl, layer.kl_to_prior(Lz))
        for i, sl in sorted(self.speaker_layers.items()):
            kl = ad.add(kl, sl.kl_to_prior(speaker_f[i]))
        if self.speaker_latent is not None:
            kl = ad.add(kl, self.speaker_latent.kl_to_prior())
        return kl

    def expected_log_lik(self, mean: Tensor, var: Tensor, Y) -> Tensor:
        """Closed-form E[log N(y; f, noise)] for f ~ N(mean, var), summed."""
        Y = as_tensor(Y)
        noise = ad.exp(self.noise_log_var)
        sq = ad.add(ad.square(ad.sub(Y, mean)), var)
        terms = ad.add(ad.mul(-0.5, ad.add(LOG_2PI, self.noise_log_var)), ad.div(ad.mul(-0.5, sq), noise))
        return terms.sum()


def elbo(model: DgpModel, X, Y, speakers, n_total: int, n_samples: int = 1, rng=None) -> Tensor:
    """Minibatch estimate of the evidence lower bound.

    ``(n_total / B) * mean_over_samples(sum_{i,d} E[log p(y | f)]) - sum KL``.
    Hidden layers are sampled; the output layer's expectation is analytic.
    """
    X = as_tensor(X)
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    if n_total < B:
        raise ValueError("n_total must be at least the batch size")
    Y = np.asarray(Y.data if isinstance(Y, Tensor) else Y, dtype=np.float64)
    factors = model._factors()
    mean, var = model._propagate(X, speakers, n_samples, True, rng, factors)
    Yrep = np.tile(Y, (n_samples, 1)) if n_samples > 1 else Y
    ell = model.expected_log_lik(mean, var, Yrep)
    scale = float(n_total) / (B * n_samples)
    return ad.sub(ad.mul(scale, ell), model.kl_terms(factors))
