"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from . import tensor as T


def numerical_grad(f, arrays, eps=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array.

    ``f`` receives plain numpy arrays and returns a float; it never sees the tape.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = float(f(*arrays))
            flat[i] = old - eps
            lo = float(f(*arrays))
            flat[i] = old
            g.reshape(-1)[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def tape_grad(fn, arrays):
    """Gradients of ``fn(*tensors)`` via the tape, one per input array."""
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    tape = T.get_tape()
    tape.clear()
    out = fn(*tensors)
    if out.size != 1:
        out = T.sum(out)
    T.backward(out)
    tape.clear()
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, tensors)]


def check_gradients(fn, arrays, eps=1e-3, rtol=1e-3, atol=1e-4, weights_seed=0):
    """Compare tape and finite-difference gradients of ``fn``.

    Non-scalar outputs are reduced with fixed random weights so every output
    element matters. Returns ``(ok, max_violation)``, where a violation is
    ``|a-n| - (atol + rtol*|n|)``.
    """
    arrays = [np.array(a, copy=True) for a in arrays]
    with T.no_grad():
        probe = fn(*[T.Tensor(a) for a in arrays])
    weights = None
    if probe.size != 1:
        weights = np.random.default_rng(weights_seed).uniform(0.5, 1.5, probe.shape).astype(probe.dtype)

    def scalar_tensor(*ts):
        out = fn(*ts)
        return out if weights is None else T.sum(out * T.Tensor(weights))

    def scalar_numpy(*arrs):
        with T.no_grad():
            return scalar_tensor(*[T.Tensor(a) for a in arrs]).item()

    analytic = tape_grad(scalar_tensor, arrays)
    numeric = numerical_grad(scalar_numpy, arrays, eps)
    worst = -np.inf
    for a, n in zip(analytic, numeric):
        viol = np.abs(a - n) - (atol + rtol * np.abs(n))
        worst = max(worst, float(viol.max()))
    return worst <= 0, worst
