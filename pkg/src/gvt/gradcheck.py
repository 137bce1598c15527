"""Central finite differences, the reference every analytic gradient is checked against."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> Tensor:
    """Estimate d f(x) / dx elementwise with (f(x+h e_i) - f(x-h e_i)) / 2h.

    ``f`` must be deterministic and return a scalar tensor. ``x`` is perturbed
    through a float64 copy; the caller's tensor is left untouched.
    """
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(Tensor(base.copy())).item()
            flat[i] = orig - h
            fm = f(Tensor(base.copy())).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return Tensor(grad)


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor * max(1, max|n|)).

    Relative where gradients are large. The floor scales with the largest entry so
    that near-zero components, whose central differences carry roundoff of order
    eps * |f| / h, are compared on the scale of the whole gradient tensor.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    floor = floor * max(1.0, float(np.max(np.abs(n))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_param_grads(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                      h: float = 1e-5) -> dict[str, float]:
    """Compare backward() gradients of ``loss_fn`` against finite differences for each named parameter.

    ``loss_fn`` closes over ``params`` and is re-evaluated after in-place perturbation.
    Returns the max relative error per parameter name.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: np.array(p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    errors = {}
    with no_grad():
        for name, p in params.items():
            numeric = np.zeros_like(p.data, dtype=np.float64)
            flat = p.data.reshape(-1)
            nflat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
            errors[name] = max_relative_error(analytic[name], numeric, floor=1e-6)
    return errors
