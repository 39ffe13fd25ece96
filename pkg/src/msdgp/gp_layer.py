"""Sparse variational GP layer with inducing points.

For each output dimension ``d`` the layer keeps a Gaussian ``q(u_d) = N(m_d, S_d)``
over the function values at the inducing inputs ``Z``.  ``S_d = L_d L_d^T`` is
stored as a raw ``D_out x M x M`` array whose strictly-lower part is ``L_d``'s
off-diagonal and whose diagonal holds ``log diag(L_d)``; entries above the
diagonal are unused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .kernel import ArcCosParams, arccos_gram, kernel_diag
from .linalg import JITTER_LEVELS, jittered_cholesky, solve_triangular

VARIANCE_FLOOR = 1e-12
MEAN_FUNCTIONS = ("zero", "identity")


def raw_from_cholesky(L: np.ndarray) -> np.ndarray:
    """Inverse of the raw-storage map for a stack of lower-triangular factors."""
    L = np.asarray(L, dtype=np.float64)
    raw = np.tril(L, -1)
    i = np.arange(L.shape[-1])
    raw[..., i, i] = np.log(L[..., i, i])
    return raw


def identity_projection(d_in: int, d_out: int) -> np.ndarray:
    """d_in x d_out matrix that copies the leading coordinates (truncate / zero-pad)."""
    P = np.zeros((d_in, d_out))
    n = min(d_in, d_out)
    P[np.arange(n), np.arange(n)] = 1.0
    return P


@dataclass
class GpLayer:
    Z: Tensor
    q_mu: Tensor
    q_sqrt: Tensor
    kernel: ArcCosParams
    mean_fn: str = "zero"
    jitter: tuple = JITTER_LEVELS
    _proj: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mean_fn not in MEAN_FUNCTIONS:
            raise ValueError(f"unknown mean function {self.mean_fn!r}")
        M, d_in = self.Z.shape
        if self.q_mu.shape[0] != M or self.q_sqrt.shape != (self.q_mu.shape[1], M, M):
            raise ValueError("inconsistent variational parameter shapes")
        if self.mean_fn == "identity":
            self._proj = identity_projection(d_in, self.d_out)

    @classmethod
    def create(
        cls,
        d_in: int,
        d_out: int,
        num_inducing: int,
        rng: np.random.Generator,
        q_variance: float = 1e-6,
        mean_fn: str = "zero",
        kernel_variance: float = 1.0,
    ) -> "GpLayer":
        """Fresh layer: Z ~ N(0, 1), m = 0, S_d = q_variance * I."""
        Z = rng.standard_normal((num_inducing, d_in))
        raw = np.zeros((d_out, num_inducing, num_inducing))
        i = np.arange(num_inducing)
        raw[:, i, i] = 0.5 * np.log(q_variance)
        return cls(
            Z=Tensor(Z, requires_grad=True),
            q_mu=Tensor(np.zeros((num_inducing, d_out)), requires_grad=True),
            q_sqrt=Tensor(raw, requires_grad=True),
            kernel=ArcCosParams.from_variance(kernel_variance),
            mean_fn=mean_fn,
        )

    @property
    def d_in(self) -> int:
        return self.Z.shape[1]

    @property
    def d_out(self) -> int:
        return self.q_mu.shape[1]

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {
            "Z": self.Z,
            "q_mu": self.q_mu,
            "q_sqrt": self.q_sqrt,
            "log_variance": self.kernel.log_variance,
        }

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        self.Z = params["Z"]
        self.q_mu = params["q_mu"]
        self.q_sqrt = params["q_sqrt"]
        self.kernel = ArcCosParams(params["log_variance"])

    def q_cholesky(self) -> Tensor:
        """Stack of lower-triangular factors L_d, shape D_out x M x M."""
        M = self.num_inducing
        diag_mask = np.eye(M)
        lower_mask = np.tril(np.ones((M, M)), -1)
        raw = self.q_sqrt
        return ad.add(ad.mul(raw, lower_mask), ad.mul(ad.exp(ad.mul(raw, diag_mask)), diag_mask))

    def prior_factor(self) -> Tensor:
        """Cholesky factor of the jittered K_ZZ."""
        return jittered_cholesky(arccos_gram(self.Z, self.Z, self.kernel), self.jitter)

    def mean_function(self, H: Tensor):
        if self.mean_fn == "zero":
            return None
        return ad.matmul(H, self._proj)

    def conditional(self, H, Lz: Tensor | None = None):
        """Marginal predictive mean and variance at the rows of ``H``.

        mean_d = m(h)_d + k_hZ Kzz^-1 m_d
        var_d  = k(h,h) - k_hZ Kzz^-1 k_Zh + k_hZ Kzz^-1 S_d Kzz^-1 k_Zh
        """
        H = as_tensor(H)
        if Lz is None:
            Lz = self.prior_factor()
        Kzh = arccos_gram(self.Z, H, self.kernel)
        A = solve_triangular(Lz, Kzh)  # Lz^-1 K_Zh
        W = solve_triangular(Lz, A, transpose=True)  # Kzz^-1 K_Zh
        mean = ad.matmul(ad.transpose(W), self.q_mu)
        mf = self.mean_function(H)
        if mf is not None:
            mean = ad.add(mean, mf)
        prior_var = ad.sub(kernel_diag(H, self.kernel), ad.square(A).sum(axis=0))
        LtW = ad.matmul(ad.transpose(self.q_cholesky()), W)  # D x M x B
        s_var = ad.transpose(ad.square(LtW).sum(axis=1))  # B x D
        var = ad.add(s_var, ad.reshape(prior_var, (-1, 1)))
        return mean, ad.clamp_min(var, VARIANCE_FLOOR)

    def sample_output(self, H, rng: np.random.Generator, Lz: Tensor | None = None) -> Tensor:
        """Reparameterized draw mean + sqrt(var) * eps."""
        mean, var = self.conditional(H, Lz)
        eps = rng.standard_normal(mean.shape)
        return ad.add(mean, ad.mul(ad.sqrt(var), eps))

    def kl_to_prior(self, Lz: Tensor | None = None) -> Tensor:
        """sum_d KL[N(m_d, S_d) || N(0, Kzz)]."""
        if Lz is None:
            Lz = self.prior_factor()
        M, D = self.num_inducing, self.d_out
        L = self.q_cholesky()
        # Lz^-1 [L_1 ... L_D] as one solve over an M x (D*M) right-hand side
        Lcat = ad.reshape(ad.transpose(L, (1, 0, 2)), (M, D * M))
        trace = ad.square(solve_triangular(Lz, Lcat)).sum()
        maha = ad.square(solve_triangular(Lz, self.q_mu)).sum()
        logdet_prior = 2.0 * ad.log(ad.diagonal(Lz)).sum()
        logdet_q = 2.0 * ad.diagonal(self.q_sqrt).sum()
        return 0.5 * (trace + maha - M * D + D * logdet_prior - logdet_q)
