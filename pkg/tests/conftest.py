import numpy as np
import pytest

from msdgp.autodiff import GradTape, Tensor, grad


def numeric_grad(fun, values: dict, eps: float = 1e-5) -> dict:
    """Central differences of scalar ``fun(values)`` w.r.t. every array in ``values``."""
    out = {}
    for name, arr in values.items():
        arr = np.asarray(arr, dtype=np.float64)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in values.items()}
            minus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in values.items()}
            plus[name][idx] += eps
            minus[name][idx] -= eps
            g[idx] = (fun(plus) - fun(minus)) / (2 * eps)
        out[name] = g
    return out


def analytic_grad(fun_tensor, values: dict) -> dict:
    params = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in values.items()}
    with GradTape():
        out = fun_tensor(params)
    return {k: g.data for k, g in grad(out, params).items()}


def rel_err(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(floor, np.max(np.abs(b))))


def check_gradients(fun_tensor, values: dict, tol: float = 1e-4, eps: float = 1e-5):
    """Assert reverse-mode gradients of ``fun_tensor`` match finite differences."""
    ana = analytic_grad(fun_tensor, values)

    def scalar(vals):
        return float(fun_tensor({k: Tensor(v) for k, v in vals.items()}).data)

    num = numeric_grad(scalar, values, eps)
    for name in values:
        err = rel_err(ana[name], num[name])
        assert err < tol, f"{name}: relative error {err:.2e}"
    return ana, num


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
