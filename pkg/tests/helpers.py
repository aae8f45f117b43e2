"""Shared oracles for the test suite."""

import numpy as np

from traitalign import ndcore as nd


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar f(*arrays) w.r.t. each array."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(*arrays)
            a[i] = old - h
            fm = f(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def gradcheck(build, arrays, rtol=1e-4, atol=1e-6, h=1e-5):
    """Compare tape gradients of `build(*tensors)` with central differences.

    Returns the worst relative error over entries whose absolute error exceeds `atol`.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [nd.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*ts)
    nd.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]

    def f(*xs):
        with nd.no_grad():
            return float(build(*[nd.Tensor(x) for x in xs]).data)

    numeric = numeric_grad(f, arrays, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        bad = err > atol
        if bad.any():
            worst = max(worst, float(np.max(err[bad] / scale[bad])))
    assert worst < rtol, f"gradient mismatch: rel err {worst:.2e}"
    return worst
