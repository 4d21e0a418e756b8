"""Belief update in the presence of one unilateral constraint ``gamma(s) >= 0``.

Each Gaussian is split across the linearized constraint with one-sided
truncated-normal moments.  The two feasible pieces are merged into the
free component, the two infeasible pieces into the surface component,
which is then flattened onto the constraint.  Correlation between the
normal coordinate and the rest of the state is handled exactly by
regressing the tangential coordinates on the normal one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import numdiff
from .belief import ConstrainedBelief, GaussianBelief, symmetrize
from .errors import EmptyTruncationError, VanishingGradientError
from .filter import DynamicsModel, ObservationModel, correct_arrays, marginalized_arrays

Array = np.ndarray

EMPTY_MASS = 1e-12
MIN_GRAD_NORM = 1e-8
ABOVE = "above"
BELOW = "below"
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ConstraintModel:
    """Signed distance ``gamma`` (feasible where >= 0) and optionally its gradient."""

    gamma: Callable[[Array], Array]
    gamma_grad: Optional[Callable[[Array], Array]] = None

    def value(self, s) -> Array:
        return np.asarray(self.gamma(np.asarray(s, dtype=float)), dtype=float)

    def grad(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        if self.gamma_grad is not None:
            return np.asarray(self.gamma_grad(s), dtype=float)
        return numdiff.gradient(self.gamma, s)

    def linearize(self, s) -> tuple[Array, Array]:
        """``(J, e)`` with ``gamma(x) ~ J x + e`` around ``s``."""
        J = self.grad(s)
        e = self.value(s) - np.einsum("...n,...n->...", J, s)
        return J, e


@dataclass(frozen=True)
class TruncationResult:
    upper: GaussianBelief
    lower: GaussianBelief
    mass_upper: float

    @property
    def mass_lower(self) -> float:
        return 1.0 - self.mass_upper


def _log_pdf(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


def _moments_above(a):
    """Standardized moments of N(0,1) restricted to ``x >= a``: (mean, var, mass)."""
    a = np.asarray(a, dtype=float)
    log_mass = special.log_ndtr(-a)
    with np.errstate(invalid="ignore", over="ignore"):
        lam = np.exp(_log_pdf(a) - log_mass)
        a_lam = np.where(np.isneginf(a), 0.0, a * lam)
    var = np.clip(1.0 + a_lam - lam * lam, 0.0, None)
    return lam, var, np.exp(log_mass)


def truncated_moments_arrays(mu, sigma, side, bound):
    """Vectorized one-sided truncated-normal moments; no empty-side checks."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    bound = np.asarray(bound, dtype=float)
    sign = 1.0 if side == ABOVE else -1.0
    point = sigma <= 0.0
    safe = np.where(point, 1.0, sigma)
    lam, var, mass = _moments_above(sign * (bound - mu) / safe)
    mean = mu + sign * safe * lam
    var = safe * safe * var
    inside = (mu >= bound) if side == ABOVE else (mu <= bound)
    mean = np.where(point, mu, mean)
    var = np.where(point, 0.0, var)
    mass = np.where(point, inside.astype(float), mass)
    return mean, var, mass


def truncated_moments_1d(mu: float, sigma: float, side: str, bound: float) -> tuple[float, float, float]:
    """Mean, variance and retained mass of ``N(mu, sigma^2)`` cut at ``bound``.

    ``side="above"`` keeps ``x >= bound``; ``side="below"`` keeps ``x <= bound``.
    Raises :class:`EmptyTruncationError` when the kept side has essentially
    no mass (below 1e-300).
    """
    if side not in (ABOVE, BELOW):
        raise ValueError(f"side must be {ABOVE!r} or {BELOW!r}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mean, var, mass = truncated_moments_arrays(mu, sigma, side, bound)
    if mass < 1e-300:
        raise EmptyTruncationError(f"no mass {side} {bound} for N({mu}, {sigma}^2)")
    return float(mean), float(var), float(mass)


def _interval_moments(mu, sigma, lo, hi):
    """Two-sided truncated-normal moments (used to cross-check the one-sided forms)."""
    l = (lo - mu) / sigma
    u = (hi - mu) / sigma
    Z = special.ndtr(u) - special.ndtr(l)
    pl = np.exp(_log_pdf(l))
    pu = np.exp(_log_pdf(u))
    lpl = 0.0 if np.isinf(l) else l * pl
    upu = 0.0 if np.isinf(u) else u * pu
    ratio = (pl - pu) / Z
    mean = mu + sigma * ratio
    var = sigma**2 * (1.0 + (lpl - upu) / Z - ratio**2)
    return mean, var, Z


def constraint_frame(b: GaussianBelief, cm: ConstraintModel) -> tuple[Array, int, float]:
    """Orthogonal frame whose ``k``-th row is the unit constraint normal at ``b.mean``.

    Returns ``(R, k, offset)`` where ``y = R s`` are frame coordinates and
    ``offset`` is the signed distance of the mean from the linearized
    constraint surface.  ``R`` is a Householder reflection, so it is the
    identity for axis-aligned constraints with a positive normal.
    """
    J = cm.grad(b.mean)
    norm = np.linalg.norm(J)
    if not norm > MIN_GRAD_NORM:
        raise VanishingGradientError(f"constraint gradient norm {norm:.3g} at {b.mean}")
    nhat = J / norm
    k = int(np.argmax(np.abs(nhat)))
    v = -nhat.copy()
    v[k] += 1.0
    vv = v @ v
    R = np.eye(b.n) if vv < 1e-30 else np.eye(b.n) - 2.0 * np.outer(v, v) / vv
    return R, k, float(cm.value(b.mean) / norm)


def _normal(cm: ConstraintModel, mean):
    g = cm.value(mean)
    J = cm.grad(mean)
    norm = np.linalg.norm(J, axis=-1)
    if np.any(~(norm > MIN_GRAD_NORM)):
        raise VanishingGradientError("constraint gradient vanishes at a linearization point")
    return J / norm[..., None], g / norm


def project_arrays(mean, cov, nhat, dist):
    P = np.eye(mean.shape[-1]) - nhat[..., :, None] * nhat[..., None, :]
    return mean - dist[..., None] * nhat, symmetrize(P @ cov @ P)


def truncate_arrays(mean, cov, nhat, dist):
    """Split a batch of Gaussians across the hyperplane ``nhat.(s - mean) = -dist``.

    Returns ``(upper_mean, upper_cov, lower_mean, lower_cov, mass_upper)``.
    A side with less than ``EMPTY_MASS`` is replaced by the boundary point
    with exactly zero mass.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    c = np.einsum("...ij,...j->...i", cov, nhat)
    s2 = np.einsum("...i,...i->...", nhat, c)
    scale = np.trace(cov, axis1=-2, axis2=-1)
    point = s2 <= 1e-14 * np.maximum(scale, 1e-300)
    s2_safe = np.where(point, 1.0, s2)
    sigma = np.sqrt(s2_safe)
    mu_u, var_u, mass_u = truncated_moments_arrays(0.0, sigma, ABOVE, -dist)
    mu_l, var_l, mass_l = truncated_moments_arrays(0.0, sigma, BELOW, -dist)

    cc = c[..., :, None] * c[..., None, :]
    base = cov - cc / s2_safe[..., None, None]

    def piece(mu1, var1):
        m = mean + c * (mu1 / s2_safe)[..., None]
        C = base + cc * (var1 / s2_safe**2)[..., None, None]
        return m, symmetrize(C)

    um, uc = piece(mu_u, var_u)
    lm, lc = piece(mu_l, var_l)

    bm, bc = project_arrays(mean, cov, nhat, dist)
    feasible = dist >= 0.0
    mass_u = np.where(point, feasible.astype(float), mass_u)
    mass_l = np.where(point, 1.0 - feasible, mass_l)
    um = np.where(point[..., None], mean, um)
    uc = np.where(point[..., None, None], cov, uc)
    lm = np.where(point[..., None], mean, lm)
    lc = np.where(point[..., None, None], cov, lc)

    empty_u = mass_u < EMPTY_MASS
    empty_l = mass_l < EMPTY_MASS
    um = np.where(empty_u[..., None], bm, um)
    uc = np.where(empty_u[..., None, None], bc, uc)
    lm = np.where(empty_l[..., None], bm, lm)
    lc = np.where(empty_l[..., None, None], bc, lc)
    mass_u = np.where(empty_u, 0.0, np.where(empty_l, 1.0, mass_u))
    return um, uc, lm, lc, mass_u


def truncate_gaussian(b: GaussianBelief, cm: ConstraintModel) -> TruncationResult:
    """Split ``b`` into its feasible and infeasible parts (moment-matched)."""
    nhat, dist = _normal(cm, b.mean)
    um, uc, lm, lc, mu = truncate_arrays(b.mean, b.cov, nhat, dist)
    return TruncationResult(GaussianBelief(um, uc), GaussianBelief(lm, lc), float(mu))


def reduce_arrays(m1, c1, m2, c2, alpha):
    a = np.asarray(alpha, dtype=float)
    d = m1 - m2
    mean = a[..., None] * m1 + (1 - a)[..., None] * m2
    cov = (
        a[..., None, None] * c1
        + (1 - a)[..., None, None] * c2
        + (a * (1 - a))[..., None, None] * d[..., :, None] * d[..., None, :]
    )
    return mean, symmetrize(cov)


def reduce_pair(a: GaussianBelief, b: GaussianBelief, alpha: float) -> GaussianBelief:
    """Single Gaussian matching the first two moments of ``alpha a + (1-alpha) b``."""
    if a.n != b.n:
        raise ValueError("cannot reduce Gaussians of different dimension")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return a
    if alpha == 0.0:
        return b
    return GaussianBelief(*reduce_arrays(a.mean, a.cov, b.mean, b.cov, alpha))


def project_to_manifold(b: GaussianBelief, cm: ConstraintModel) -> GaussianBelief:
    """Move the mean onto the linearized surface and drop the normal variance."""
    nhat, dist = _normal(cm, b.mean)
    return GaussianBelief(*project_arrays(b.mean, b.cov, nhat, dist))


def _split_weights(alpha, mass1, mass2):
    w1u = alpha * mass1
    w2u = (1 - alpha) * mass2
    w1l = alpha * (1 - mass1)
    w2l = (1 - alpha) * (1 - mass2)
    tot_u = w1u + w2u
    tot_l = w1l + w2l
    beta_u = np.where(tot_u > 0, w1u / np.where(tot_u > 0, tot_u, 1.0), alpha)
    beta_l = np.where(tot_l > 0, w1l / np.where(tot_l > 0, tot_l, 1.0), alpha)
    return np.clip(tot_u, 0.0, 1.0), beta_u, beta_l


def mixture_step_arrays(m1, c1, m2, c2, alpha, a, dyn, obs, cm, z=None):
    """One constrained belief step on arrays (batch-capable).

    ``z=None`` gives the deterministic planning update; otherwise each
    component is corrected with the observation ``z``.
    """
    if z is None:
        m1, c1 = marginalized_arrays(m1, c1, a, dyn, obs)
        m2, c2 = marginalized_arrays(m2, c2, a, dyn, obs)
    else:
        m1, c1 = correct_arrays(m1, c1, a, z, dyn, obs)
        m2, c2 = correct_arrays(m2, c2, a, z, dyn, obs)
    n1, d1 = _normal(cm, m1)
    n2, d2 = _normal(cm, m2)
    u1m, u1c, l1m, l1c, p1 = truncate_arrays(m1, c1, n1, d1)
    u2m, u2c, l2m, l2c, p2 = truncate_arrays(m2, c2, n2, d2)
    alpha = np.asarray(alpha, dtype=float)
    new_alpha, beta_u, beta_l = _split_weights(alpha, p1, p2)
    fm, fc = reduce_arrays(u1m, u1c, u2m, u2c, beta_u)
    sm, sc = reduce_arrays(l1m, l1c, l2m, l2c, beta_l)
    ns, ds = _normal(cm, sm)
    sm, sc = project_arrays(sm, sc, ns, ds)
    return fm, fc, sm, sc, new_alpha


def _pack_result(parts) -> ConstrainedBelief:
    fm, fc, sm, sc, alpha = parts
    return ConstrainedBelief(GaussianBelief(fm, fc), GaussianBelief(sm, sc), float(alpha))


def constrained_update(cb: ConstrainedBelief, a, dyn: DynamicsModel, obs: ObservationModel,
                       cm: ConstraintModel) -> ConstrainedBelief:
    """Deterministic mixture update: filter, truncate, merge, project, reweight."""
    return _pack_result(mixture_step_arrays(
        cb.free.mean, cb.free.cov, cb.surface.mean, cb.surface.cov, cb.weight, a, dyn, obs, cm))


def constrained_correct(cb: ConstrainedBelief, a, z, dyn: DynamicsModel, obs: ObservationModel,
                        cm: ConstraintModel) -> ConstrainedBelief:
    """Execution-time counterpart of :func:`constrained_update` using a real observation."""
    return _pack_result(mixture_step_arrays(
        cb.free.mean, cb.free.cov, cb.surface.mean, cb.surface.cov, cb.weight, a, dyn, obs, cm,
        z=np.asarray(z, dtype=float)))


def constrained_from_gaussian(b: GaussianBelief, cm: ConstraintModel) -> ConstrainedBelief:
    """Wrap a Gaussian as a mixture, splitting off any mass already past the constraint."""
    tr = truncate_gaussian(b, cm)
    return ConstrainedBelief(tr.upper, project_to_manifold(tr.lower, cm), tr.mass_upper)
