"""Shared oracles for the test suite.

The finite-difference gradient oracle is deliberately independent of the
autodiff engine: it only pokes tensor entries and re-runs a user-supplied
forward function.
"""

import numpy as np


def numeric_grads(f, tensors, eps=1e-3):
    """Central-difference gradients of the scalar ``f()`` w.r.t. each tensor.

    Entries are perturbed in place at float32 resolution; the realized step
    sizes are measured exactly so representation error does not pollute the
    quotient.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            hi = np.float32(float(orig) + eps)
            lo = np.float32(float(orig) - eps)
            flat[i] = hi
            f_hi = f()
            flat[i] = lo
            f_lo = f()
            flat[i] = orig
            g[i] = (f_hi - f_lo) / (float(hi) - float(lo))
        grads.append(g.reshape(t.data.shape))
    return grads


def rel_err(analytic, numeric) -> float:
    """Norm-based relative disagreement between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm((a - n).ravel()) / (np.linalg.norm(a.ravel()) + 1e-8))


def max_rel_err(loss_fn, params, eps=1e-3) -> float:
    """Worst relative error across ``params`` for a fresh forward/backward."""
    from dlflab import tensor as T

    for p in params:
        p.zero_grad()
    loss = loss_fn()
    T.backward(loss)
    numeric = numeric_grads(lambda: float(loss_fn().data), params, eps=eps)
    return max(rel_err(p.grad.data, n) for p, n in zip(params, numeric))
