"""Extended Kalman filter pieces used for planning and for execution.

Conventions: the observation Jacobian ``w_s`` is the ``p x n`` row
Jacobian, and both ``w_s`` and the observation noise ``W`` are evaluated
at the predicted mean.  Planning uses :func:`marginalized_update`, which
is the correction step with the innovation replaced by its expectation
(zero).  Functions named ``*_arrays`` work on raw arrays with arbitrary
leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import numdiff
from .belief import GaussianBelief, symmetrize
from .errors import NonFiniteError, SingularInnovationError

Array = np.ndarray


@dataclass(frozen=True)
class DynamicsModel:
    """Drift ``f(s, a)``, noise map ``q(s, a)`` (n x k) and timestep ``tau``.

    The per-step process covariance is ``tau * q q^T``.  ``f_jac`` may be
    given as an analytic ``df/ds``; otherwise it is finite-differenced.
    """

    f: Callable[[Array, Array], Array]
    q: Callable[[Array, Array], Array]
    tau: float
    f_jac: Optional[Callable[[Array, Array], Array]] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"timestep must be positive, got {self.tau}")

    def process_cov(self, s: Array, a: Array) -> Array:
        q = np.asarray(self.q(s, a), dtype=float)
        return self.tau * q @ np.swapaxes(q, -1, -2)


@dataclass(frozen=True)
class ObservationModel:
    """Mean observation ``w(s)`` and noise covariance ``W(s, a)``."""

    w: Callable[[Array], Array]
    W: Callable[[Array, Array], Array]
    w_jac: Optional[Callable[[Array], Array]] = None


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def euler_step(s, a, dyn: DynamicsModel) -> Array:
    """``s + tau * f(s, a)``."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    drift = _check_finite(np.asarray(dyn.f(s, a), dtype=float), "drift")
    return s + dyn.tau * drift


def transition_jacobian(s, a, dyn: DynamicsModel) -> Array:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    n = s.shape[-1]
    if dyn.f_jac is not None:
        fs = _check_finite(np.asarray(dyn.f_jac(s, a), dtype=float), "drift Jacobian")
        return np.eye(n) + dyn.tau * fs
    return numdiff.jacobian(lambda x, u: euler_step(x, u, dyn), s, a)


def observation_jacobian(s, obs: ObservationModel) -> Array:
    s = np.asarray(s, dtype=float)
    if obs.w_jac is not None:
        return _check_finite(np.asarray(obs.w_jac(s), dtype=float), "observation Jacobian")
    return numdiff.jacobian(obs.w, s)


def jacobians(s, a, dyn: DynamicsModel, obs: ObservationModel) -> tuple[Array, Array]:
    """``(F_s, w_s)`` at ``(s, a)``; analytic where the models provide them."""
    return transition_jacobian(s, a, dyn), observation_jacobian(s, obs)


def predict_arrays(mean, cov, a, dyn: DynamicsModel) -> tuple[Array, Array]:
    mean = np.asarray(mean, dtype=float)
    a = np.asarray(a, dtype=float)
    Fs = transition_jacobian(mean, a, dyn)
    H = Fs @ cov @ np.swapaxes(Fs, -1, -2) + dyn.process_cov(mean, a)
    H = symmetrize(H)
    _check_finite(H, "predicted covariance")
    return euler_step(mean, a, dyn), H


def _solve_innovation(S: Array, rhs: Array) -> Array:
    """Solve ``S X = rhs`` for SPD ``S``, regularizing only if needed."""
    try:
        np.linalg.cholesky(S)
        return np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        pass
    p = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)[..., None, None]
    lam = np.where(tr > 0, 1e-9 * tr, 1e-12)
    for _ in range(8):
        Sr = S + lam * np.eye(p)
        try:
            np.linalg.cholesky(Sr)
            return np.linalg.solve(Sr, rhs)
        except np.linalg.LinAlgError:
            lam = lam * 100.0
    raise SingularInnovationError("innovation covariance is singular beyond the regularization floor")


def _gain_terms(mean_pred, H, a, obs):
    ws = observation_jacobian(mean_pred, obs)
    W = np.asarray(obs.W(mean_pred, a), dtype=float)
    _check_finite(W, "observation noise")
    wsH = ws @ H
    S = symmetrize(wsH @ np.swapaxes(ws, -1, -2) + W)
    G = _solve_innovation(S, wsH)  # S^-1 w_s H, shape (..., p, n)
    return wsH, G


def correct_arrays(mean, cov, a, z, dyn, obs) -> tuple[Array, Array]:
    mean_pred, H = predict_arrays(mean, cov, a, dyn)
    wsH, G = _gain_terms(mean_pred, H, a, obs)
    innov = np.asarray(z, dtype=float) - np.asarray(obs.w(mean_pred), dtype=float)
    # K = H w_s^T S^-1 = G^T
    new_mean = mean_pred + np.einsum("...pn,...p->...n", G, innov)
    new_cov = symmetrize(H - np.swapaxes(wsH, -1, -2) @ G)
    _check_finite(new_mean, "corrected mean")
    return new_mean, new_cov


def marginalized_arrays(mean, cov, a, dyn, obs) -> tuple[Array, Array]:
    mean_pred, H = predict_arrays(mean, cov, a, dyn)
    wsH, G = _gain_terms(mean_pred, H, a, obs)
    new_cov = symmetrize(H - np.swapaxes(wsH, -1, -2) @ G)
    return mean_pred, new_cov


def ekf_predict(b: GaussianBelief, a, dyn: DynamicsModel, obs: ObservationModel | None = None):
    """Predicted mean and uncorrected covariance ``F_s S F_s^T + Q``."""
    return predict_arrays(b.mean, b.cov, a, dyn)


def ekf_correct(b: GaussianBelief, a, z, dyn: DynamicsModel, obs: ObservationModel) -> GaussianBelief:
    """One EKF step conditioned on the observation ``z``."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(obs.w(b.mean)).shape[-1]
    if z.shape != (p,):
        raise ValueError(f"observation must have shape ({p},), got {z.shape}")
    return GaussianBelief(*correct_arrays(b.mean, b.cov, a, z, dyn, obs))


def marginalized_update(b: GaussianBelief, a, dyn: DynamicsModel, obs: ObservationModel) -> GaussianBelief:
    """Deterministic belief update: Euler mean, expected-observation covariance."""
    return GaussianBelief(*marginalized_arrays(b.mean, b.cov, a, dyn, obs))
