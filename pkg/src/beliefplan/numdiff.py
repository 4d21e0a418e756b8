"""Central finite differences that respect leading batch axes."""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteError

REL_STEP = 1e-5


def steps_for(x: np.ndarray, rel: float = REL_STEP) -> np.ndarray:
    return rel * (1.0 + np.abs(x))


def jacobian(fun, x, *args, rel_step: float = REL_STEP) -> np.ndarray:
    """Jacobian of ``fun(x, *args)`` with respect to ``x``.

    ``x`` has shape ``(..., n)`` and ``fun`` must broadcast over leading
    axes, returning ``(..., p)``.  The result has shape ``(..., p, n)``.
    Extra ``args`` get a singleton axis inserted so they broadcast against
    the stacked perturbations.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = steps_for(x, rel_step)
    eye = np.eye(n)
    pert = h[..., :, None] * eye
    xs = x[..., None, :]
    bargs = [np.asarray(a)[..., None, :] if np.ndim(a) > 0 else a for a in args]
    fp = np.asarray(fun(xs + pert, *bargs), dtype=float)
    fm = np.asarray(fun(xs - pert, *bargs), dtype=float)
    jac = (fp - fm) / (2.0 * h[..., :, None])
    if not np.all(np.isfinite(jac)):
        raise NonFiniteError("non-finite finite-difference derivative")
    return np.swapaxes(jac, -1, -2)


def gradient(fun, x, *args, rel_step: float = REL_STEP) -> np.ndarray:
    """Gradient of a scalar-valued ``fun`` (broadcasting), shape ``(..., n)``."""
    jac = jacobian(lambda y, *a: np.asarray(fun(y, *a))[..., None], x, *args, rel_step=rel_step)
    return jac[..., 0, :]
