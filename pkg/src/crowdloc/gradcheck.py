"""Finite-difference gradient verification.

Forward evaluation stays in float32 (that is what the kernel computes),
but the central-difference arithmetic runs in float64 so the check is
not dominated by catastrophic cancellation. Errors are reported relative
to the max-norm of the numerical gradient, with a floor for gradients
that are legitimately tiny.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad, tsum

__all__ = ["finite_diff_grad", "max_rel_error", "gradient_check"]


def finite_diff_grad(f, x, h=1e-3):
    """Central-difference gradient of scalar-valued ``f`` at array ``x``.

    ``f`` maps an ndarray to a float; each coordinate is perturbed by
    +/- h in turn. O(n) evaluations per coordinate pair, so keep inputs
    small.
    """
    x = np.asarray(x, dtype=np.float32)
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-3):
    """Largest elementwise error, normalized by the numeric grad scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(numeric).max(initial=0.0)), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def gradient_check(forward, params, rng, h=1e-3, floor=1e-3):
    """Compare backward() grads against finite differences per parameter.

    ``forward`` takes no arguments and returns a Tensor freshly computed
    from the current values of ``params`` (dict name -> Tensor). The test
    loss is a random +/-1 weighted sum of the output: multiplying by +/-1
    is exact in fp32, so the graph backward receives the sign array
    unperturbed, while the finite-difference side evaluates the same dot
    product in float64. A plain mean would give per-element gradients of
    1/N and drown in evaluation noise; the sign trick keeps the gradient
    scale at 1 per output element.

    Returns {param name: max relative error}.
    """
    probe = forward()
    signs = rng.choice([-1.0, 1.0], size=probe.shape).astype(np.float32)
    sign_t = Tensor(signs)
    s64 = signs.astype(np.float64).ravel()

    for p in params.values():
        p.zero_grad()
    tsum(forward() * sign_t).backward()
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }

    errors = {}
    for name, p in params.items():
        def f(arr, _p=p):
            _p.data = arr.astype(np.float32)
            with no_grad():
                out = forward()
            return float(np.dot(out.data.astype(np.float64).ravel(), s64))

        numeric = finite_diff_grad(f, p.data.copy(), h=h)
        p.data = p.data.astype(np.float32)
        errors[name] = max_rel_error(analytic[name], numeric, floor=floor)
    return errors
