"""
Finite difference derivatives, used to verify analytic gradients.
"""

__all__ = [
    'jac_central',
    'relative_error',
    'check_gradients',
]

import numpy as np
import torch


def jac_central(f, x0, delta=1e-3):
    """Compute jacobian ``df/dx_i`` using central differences."""
    x0 = np.asarray(x0, dtype=float)
    return np.array([
        (np.asarray(f(x0 + dx)) - np.asarray(f(x0 - dx))) / (2 * delta)
        for dx in np.eye(len(x0)) * delta
    ])


def relative_error(a, b):
    """``|a-b| / max(|a|, |b|)`` in the euclidean norm, 0 if both vanish."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(model, loss_fn, delta=1e-3, samples=None, seed=0):
    """
    Compare autograd gradients of ``loss_fn(model)`` with central
    differences, perturbing parameters in place.

    If ``samples`` is given, only that many randomly chosen entries of each
    parameter tensor are checked. Returns ``{name: relative_error}``.
    """
    model.zero_grad(set_to_none=True)
    loss_fn(model).backward()
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            analytic = p.grad.view(-1)
            n = flat.numel()
            entries = (np.arange(n) if samples is None or samples >= n
                       else rng.choice(n, samples, replace=False))

            def f(x, i):
                old = flat[i].item()
                flat[i] = x
                try:
                    return loss_fn(model).item()
                finally:
                    flat[i] = old

            numeric = [
                jac_central(lambda x: f(x[0], i), [flat[i].item()], delta)[0]
                for i in entries
            ]
            errors[name] = relative_error(
                [analytic[i].item() for i in entries], numeric)
    return errors
