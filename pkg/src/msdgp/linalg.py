"""Cholesky factorization and triangular solves with reverse-mode rules."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular as _solve_tri

from .autodiff import Tensor, _make, add, as_tensor, diagonal, log, mul
from .errors import NotPositiveDefinite

SYMMETRY_TOL = 1e-10
JITTER_LEVELS = (1e-6, 1e-4)


def _phi(x: np.ndarray) -> np.ndarray:
    out = np.tril(x)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky(a) -> Tensor:
    """Lower-triangular ``L`` with ``a = L @ L.T``.

    Raises NotPositiveDefinite when a pivot is not strictly positive.  The
    gradient is the symmetric one, so ``a`` is treated as a symmetric input.
    """
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1] or ad.shape[0] < 1:
        raise ValueError(f"cholesky needs a non-empty square matrix, got {ad.shape}")
    scale = max(1.0, float(np.max(np.abs(ad)))) if ad.size else 1.0
    if np.max(np.abs(ad - ad.T)) > SYMMETRY_TOL * scale:
        raise ValueError("cholesky input is not symmetric")
    if not np.all(np.isfinite(ad)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        L = np.linalg.cholesky(ad)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(L) > 0) or not np.all(np.isfinite(L)):
        raise NotPositiveDefinite("non-positive pivot")

    def vjp(g):
        P = _phi(L.T @ g)
        # L^-T P L^-1
        Y = _solve_tri(L, P.T, lower=True, trans="T").T
        ga = _solve_tri(L, Y, lower=True, trans="T")
        return (0.5 * (ga + ga.T),)

    return _make(L, (a,), vjp)


def solve_triangular(L, b, transpose: bool = False) -> Tensor:
    """Solve ``L x = b`` (or ``L.T x = b``) for lower-triangular 2-D ``L``.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    L, b = as_tensor(L), as_tensor(b)
    Ld = L.data
    trans = "T" if transpose else "N"
    x = _solve_tri(Ld, b.data, lower=True, trans=trans, check_finite=False)

    def vjp(g):
        gb = _solve_tri(Ld, g, lower=True, trans="N" if transpose else "T", check_finite=False)
        gL = None
        if L.requires_grad:
            x2, gb2 = (x, gb) if x.ndim == 2 else (x[:, None], gb[:, None])
            gL = -np.tril(x2 @ gb2.T) if transpose else -np.tril(gb2 @ x2.T)
        return gL, gb

    return _make(x, (L, b), vjp)


def jittered_cholesky(K: Tensor, levels=JITTER_LEVELS) -> Tensor:
    """Factorize a kernel Gram matrix after adding relative diagonal jitter.

    Tries ``level * mean(diag(K))`` for each level in turn and re-raises the
    last NotPositiveDefinite if every attempt fails.
    """
    n = K.shape[0]
    I = np.eye(n)
    scale = diagonal(K).mean()
    err = None
    for level in levels:
        try:
            return cholesky(add(K, mul(scale * level, I)))
        except NotPositiveDefinite as exc:
            err = exc
    raise err


def logdet_from_cholesky(L: Tensor) -> Tensor:
    return 2.0 * log(diagonal(L)).sum()
