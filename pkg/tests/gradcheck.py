"""Central finite-difference oracle shared by unit and acceptance tests."""

import numpy as np

from reviewpt.autograd import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar-valued f at x, entry by entry."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def check_op(build, arrays, wrt, h=1e-5, tol=1e-4):
    """Compare backward() grads of ``build(*tensors)`` against the oracle.

    ``build`` maps Tensors to a scalar Tensor; ``wrt`` indexes the argument
    being checked.  All arrays must be float64.
    """
    tensors = [Tensor(a, requires_grad=(i == wrt)) for i, a in enumerate(arrays)]
    loss = build(*tensors)
    loss.backward()
    analytic = tensors[wrt].grad

    def f(x):
        args = [Tensor(a) for a in arrays]
        args[wrt] = Tensor(x)
        return build(*args).item()

    numeric = numeric_grad(f, arrays[wrt], h=h)
    err = max_rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return err
