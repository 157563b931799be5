import numpy as np
import pytest


def numerical_grad(f, arr, eps=1e-6):
    """Central differences of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric):
    """Largest entrywise deviation, relative to the larger of the two arrays' scales."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def layer_gradcheck(layer, x, rng, eps=1e-6):
    """Relative errors for the input and every parameter of ``layer`` under a
    random linear read-out of its output."""
    y, _ = layer.forward(x)
    R = rng.standard_normal(np.shape(y))

    def f():
        return float((layer.forward(x)[0] * R).sum())

    for p in layer.params():
        p.zero_grad()
    _, cache = layer.forward(x)
    dx = layer.backward(R, cache)
    errs = {"x": rel_error(dx, numerical_grad(f, x, eps))}
    for k, p in enumerate(layer.params()):
        errs[f"{k}:{p.name}"] = rel_error(p.grad, numerical_grad(f, p.value, eps))
    return errs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
