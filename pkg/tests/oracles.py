"""Shared independent oracles: central finite differences and error metrics.

These deliberately know nothing about the autodiff engine's internals; they
re-run a scalar-valued closure with perturbed parameter entries.
"""

import numpy as np


def rel_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> float:
    """L2 relative error with an absolute floor for near-zero references.

    Central differences at step h carry rounding noise of roughly
    |f| * eps / h per coordinate, so a reference gradient below that level
    cannot certify a relative tolerance; flooring the denominator turns the
    check into `||a - fd|| < tol * floor` there (an absolute bound at the
    oracle's own resolution).
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(float(np.linalg.norm(reference)), floor)
    return float(np.linalg.norm(analytic - reference)) / denom


def fd_grad(f, array: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. every entry of `array`.

    `f` must read `array` afresh on each call (the closure recomputes the
    forward pass); `array` is restored after probing.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def check_grads(named_params, build, step: float = 1e-6) -> dict:
    """FD-check every named tensor against one backward pass.

    `build()` must return a fresh scalar Value computed from the parameters'
    current data. Returns {name: rel_error}.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad[...] = 0.0
    build().backward()
    errors = {}
    for name, p in named_params:
        fd = fd_grad(lambda: float(build().data), p.data, step=step)
        errors[name] = rel_error(p.grad, fd)
    return errors
