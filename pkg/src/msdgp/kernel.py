"""Order-1 arc-cosine kernel.

    k(x, y) = s2 / pi * |x| |y| * (sin t + (pi - t) cos t),   cos t = x.y / (|x| |y|)

with output variance ``s2`` stored as its log.  Rows with zero norm give a
zero kernel row and contribute no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, arccos_j1, as_tensor, div, exp, matmul, mul, row_norms, transpose

KERNEL_ORDER = 1


@dataclass
class ArcCosParams:
    log_variance: Tensor

    @classmethod
    def from_variance(cls, variance: float, requires_grad: bool = True) -> "ArcCosParams":
        if variance <= 0:
            raise ValueError("kernel variance must be positive")
        return cls(Tensor(np.log(variance), requires_grad=requires_grad))

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance.data))


def _log_var(params) -> Tensor:
    return params.log_variance if isinstance(params, ArcCosParams) else as_tensor(params)


def arccos_gram(X, Y, params) -> Tensor:
    """n x m Gram matrix between the rows of ``X`` and ``Y``.

    ``params`` is an :class:`ArcCosParams` or a log-variance tensor.
    """
    X, Y = as_tensor(X), as_tensor(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1] or X.shape[1] < 1:
        raise ValueError(f"incompatible inputs {X.shape} and {Y.shape}")
    nx = row_norms(X)
    ny = row_norms(Y)
    # unit placeholder for zero rows; the final |x||y| factor zeroes them out
    sx = nx + (nx.data == 0)
    sy = ny + (ny.data == 0)
    dots = matmul(X, transpose(Y))
    outer_safe = mul(sx.reshape(-1, 1), sy.reshape(1, -1))
    cos = div(dots, outer_safe)
    outer = mul(nx.reshape(-1, 1), ny.reshape(1, -1))
    scale = exp(_log_var(params)) * (1.0 / np.pi)
    return mul(scale, mul(outer, arccos_j1(cos)))


def kernel_diag(X, params) -> Tensor:
    """k(x_i, x_i) = s2 * |x_i|^2 for each row."""
    X = as_tensor(X)
    return mul(exp(_log_var(params)), mul(X, X).sum(axis=1))
