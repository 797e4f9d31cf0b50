"""Shared independent oracles for the test suite.

The finite-difference gradient checker here is intentionally unaware of the
autodiff implementation: it only re-evaluates a loss callable at perturbed
parameter values.
"""

import numpy as np


def finite_difference_grads(loss_fn, params, h=1e-3):
    """Central-difference gradient of loss_fn w.r.t. each tensor in params.

    loss_fn() must rebuild its graph from the current param contents and
    return a float. Perturbations are applied to the float32 storage.
    """
    grads = []
    for p in params:
        g = np.zeros(p.dims, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = np.float32(float(orig) + h)
            up = loss_fn()
            flat[i] = np.float32(float(orig) - h)
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    """Vector-level relative error between two gradient stacks."""
    a = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in a])
    b = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in b])
    denom = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom
