import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdgp import autodiff as ad
from msdgp.kernel import ArcCosParams, arccos_gram, kernel_diag
from msdgp.autodiff import GradTape, Tensor, grad

from conftest import check_gradients

UNIT = ArcCosParams.from_variance(1.0)


def k(x, y, var=1.0):
    return arccos_gram(np.atleast_2d(x), np.atleast_2d(y), ArcCosParams.from_variance(var)).data[0, 0]


def test_parallel_unit_vectors():
    assert np.isclose(k([1.0, 0.0], [1.0, 0.0]), 1.0, atol=1e-12)


def test_orthogonal_unit_vectors():
    assert np.isclose(k([1.0, 0.0], [0.0, 1.0]), 1.0 / np.pi, atol=1e-12)


def test_opposite_vectors():
    assert abs(k([1.0, 0.0], [-1.0, 0.0])) < 1e-12


def test_closed_form_at_random_angle(rng):
    x, y = rng.normal(size=3), rng.normal(size=3)
    theta = np.arccos(x @ y / np.linalg.norm(x) / np.linalg.norm(y))
    expect = 2.5 / np.pi * np.linalg.norm(x) * np.linalg.norm(y) * (np.sin(theta) + (np.pi - theta) * np.cos(theta))
    assert np.isclose(k(x, y, 2.5), expect, rtol=1e-12)


def test_diag_examples():
    assert np.allclose(kernel_diag(np.array([[1.0, 0.0], [0.0, 2.0]]), UNIT).data, [1.0, 4.0])
    X = np.array([[3.0, 4.0]])
    p = ArcCosParams.from_variance(2.0)
    assert np.isclose(kernel_diag(X, p).data[0], 50.0)
    assert np.isclose(arccos_gram(X, X, p).data[0, 0], 50.0)


def test_zero_row_gives_zero_and_zero_gradient():
    X = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert kernel_diag(X, UNIT).data[0] == 0.0
    G = arccos_gram(X, X, UNIT).data
    assert np.all(G[0] == 0) and np.all(G[:, 0] == 0)
    t = Tensor(X, requires_grad=True)
    with GradTape():
        s = arccos_gram(t, Tensor(np.array([[0.5, -1.0]])), UNIT).sum()
    (g,) = grad(s, [t])
    assert np.all(g.data[0] == 0) and np.all(np.isfinite(g.data))


def test_diag_matches_gram(rng):
    X = rng.normal(size=(6, 3))
    assert np.allclose(np.diag(arccos_gram(X, X, UNIT).data), kernel_diag(X, UNIT).data, rtol=1e-12)


def test_gram_gradients(rng):
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 5))
    check_gradients(lambda p: ad.mul(arccos_gram(p["X"], p["Y"], p["lv"]), w).sum(),
                    {"X": X, "Y": Y, "lv": np.array(0.3)})


def test_gradient_near_parallel_inputs():
    # |cos| = 1 - 1e-7
    c = 1 - 1e-7
    y = np.array([[c, np.sqrt(1 - c * c)]])
    x = np.array([[1.0, 0.0]])
    check_gradients(lambda p: arccos_gram(p["x"], y, UNIT).sum(), {"x": x}, eps=1e-9)


def test_scaling_is_exact(rng):
    X = rng.normal(size=(5, 3))
    a = arccos_gram(X, X, Tensor(np.log(1.0))).data
    b = arccos_gram(X, X, Tensor(np.log(4.0))).data
    assert np.allclose(b, 4.0 * a, rtol=1e-14, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_psd_property(n, d, seed):
    X = np.random.default_rng(seed).normal(size=(n, d))
    K = arccos_gram(X, X, UNIT).data
    assert np.allclose(K, K.T)
    jitter = 1e-6 * np.mean(np.diag(K))
    assert np.linalg.eigvalsh(K + jitter * np.eye(n)).min() >= -1e-8
