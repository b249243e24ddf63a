"""Central finite-difference gradient checking."""
import numpy as np

from semiproto.errors import ConfigurationError, NumericError
from semiproto.numerics.tensor import backward, no_grad


class GradCheckError(AssertionError):
    pass


def numerical_grads(f, params, eps=1e-5):
    """Central differences of ``f`` w.r.t. every coordinate of ``params``."""
    out = []
    with no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _value(f, params)
                flat[i] = orig - eps
                fm = _value(f, params)
                flat[i] = orig
                g.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
            out.append(g)
    return out


def _value(f, params):
    try:
        v = float(f(params).data)
    except NumericError as err:
        raise NumericError(f"f is non-finite at a perturbed point: {err}") from err
    if not np.isfinite(v):
        raise NumericError("f is non-finite at a perturbed point")
    return v


def grad_check(f, params, eps=1e-5, tol=None):
    """Max relative error between autodiff and central differences.

    The error for each coordinate is ``|a - n| / max(1, |a|, |n|)``. If
    ``tol`` is given and exceeded, :class:`GradCheckError` is raised.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.data = np.array(p.data, dtype=np.float64)  # own the buffer we perturb
        p.requires_grad = True
    analytic = backward(f(params), wrt=params)
    numeric = numerical_grads(f, params, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(err.max()))
    if tol is not None and worst > tol:
        raise GradCheckError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
