"""State rewards and their expectations under Gaussian beliefs.

Rewards are built from cost terms (rewards are negated costs).  Each term
knows its exact Gaussian expectation, so domain rewards never need
sampling.  Arbitrary callables fall back to symmetric sigma-point
cubature with ``2n+1`` points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .belief import ConstrainedBelief

Array = np.ndarray


def _as_map(D) -> Array:
    return np.atleast_2d(np.asarray(D, dtype=float))


def _project_cov(D, mean, cov) -> Array:
    """``D cov D^T``; ``cov`` may be a full matrix or a vector of variances."""
    if np.ndim(cov) == np.ndim(mean):
        return np.einsum("ij,...j,kj->...ik", D, cov, D)
    return np.einsum("ij,...jl,kl->...ik", D, cov, D)


@dataclass(frozen=True)
class QuadraticStateCost:
    """``weight * |D s - c|^2``."""

    D: Array
    c: Array
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "D", _as_map(self.D))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))

    def value(self, s, a=None) -> Array:
        r = np.asarray(s) @ self.D.T - self.c
        return self.weight * np.sum(r * r, axis=-1)

    def expectation(self, mean, cov, a=None) -> Array:
        r = np.asarray(mean) @ self.D.T - self.c
        if np.ndim(cov) == np.ndim(mean):
            spread = cov @ (self.D**2).sum(axis=0)
        else:
            spread = np.einsum("ij,...jk,ik->...", self.D, cov, self.D)
        return self.weight * (np.sum(r * r, axis=-1) + spread)


@dataclass(frozen=True)
class GaussianBumpCost:
    """``height * exp(-|D s - c|^2 / (2 width^2))``, e.g. an obstacle penalty."""

    D: Array
    c: Array
    height: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "D", _as_map(self.D))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))

    def value(self, s, a=None) -> Array:
        r = np.asarray(s) @ self.D.T - self.c
        return self.height * np.exp(-np.sum(r * r, axis=-1) / (2.0 * self.width**2))

    def expectation(self, mean, cov, a=None) -> Array:
        r = np.asarray(mean) @ self.D.T - self.c
        k = self.D.shape[0]
        w2 = self.width**2
        S = w2 * np.eye(k) + _project_cov(self.D, mean, cov)
        if k == 2:
            a_, b_, c_, d_ = S[..., 0, 0], S[..., 0, 1], S[..., 1, 0], S[..., 1, 1]
            det = a_ * d_ - b_ * c_
            quad = (d_ * r[..., 0] ** 2 - (b_ + c_) * r[..., 0] * r[..., 1] + a_ * r[..., 1] ** 2) / det
        else:
            det = np.linalg.det(S)
            quad = np.einsum("...i,...i->...", r, np.linalg.solve(S, r[..., None])[..., 0])
        return self.height * np.sqrt(w2**k / det) * np.exp(-0.5 * quad)


@dataclass(frozen=True)
class ActionCost:
    """``a^T R a`` with ``R`` given as a matrix or as its diagonal."""

    R: Array

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))

    def value(self, s=None, a=None) -> Array:
        a = np.asarray(a, dtype=float)
        if self.R.ndim == 1:
            return np.sum(self.R * a * a, axis=-1)
        return np.einsum("...i,ij,...j->...", a, self.R, a)

    def expectation(self, mean=None, cov=None, a=None) -> Array:
        return self.value(None, a)


@dataclass(frozen=True)
class StageReward:
    """Reward ``-(sum of running costs)`` per step and ``-(sum of terminal costs)`` at the end.

    Expectations accept ``cov`` either as ``(..., n, n)`` matrices or as
    ``(..., n)`` variance vectors for diagonal beliefs.
    """

    running: Sequence = field(default_factory=tuple)
    terminal: Sequence = field(default_factory=tuple)

    def __call__(self, s, a, i=0) -> Array:
        return -sum((t.value(s, a) for t in self.running), np.zeros(np.shape(s)[:-1]))

    def terminal_value(self, s) -> Array:
        return -sum((t.value(s, None) for t in self.terminal), np.zeros(np.shape(s)[:-1]))

    def expected(self, mean, cov, a, i=0) -> Array:
        return -sum((t.expectation(mean, cov, a) for t in self.running), np.zeros(np.shape(mean)[:-1]))

    def expected_terminal(self, mean, cov) -> Array:
        return -sum((t.expectation(mean, cov, None) for t in self.terminal), np.zeros(np.shape(mean)[:-1]))


def sigma_points(mean, cov, kappa: float = 1.0) -> tuple[Array, Array]:
    """Symmetric ``2n+1`` cubature points and weights (exact for quadratics)."""
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[-1]
    if np.ndim(cov) == np.ndim(mean):
        cov = np.asarray(cov)[..., :, None] * np.eye(n)
    vals, vecs = np.linalg.eigh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]
    spread = np.sqrt(n + kappa) * np.swapaxes(root, -1, -2)
    pts = np.concatenate([mean[..., None, :], mean[..., None, :] + spread, mean[..., None, :] - spread], axis=-2)
    w = np.full(2 * n + 1, 0.5 / (n + kappa))
    w[0] = kappa / (n + kappa)
    return pts, w


def expected_reward(mean, cov, a, r, i=0, terminal: bool = False) -> Array:
    """``E[r(s, a, i)]`` for ``s ~ N(mean, cov)``, analytic when ``r`` allows it."""
    if terminal:
        if hasattr(r, "expected_terminal"):
            return r.expected_terminal(mean, cov)
        pts, w = sigma_points(mean, cov)
        return np.asarray(r(pts)) @ w
    if hasattr(r, "expected"):
        return r.expected(mean, cov, a, i)
    pts, w = sigma_points(mean, cov)
    a_b = None if a is None else np.asarray(a)[..., None, :]
    return np.asarray(r(pts, a_b, i)) @ w


def belief_reward(b, a, r, i: int = 0, terminal: bool = False) -> float:
    """Expected reward of a Gaussian or constrained belief.

    Mixtures are scored as the weight-averaged component expectations.
    """
    if isinstance(b, ConstrainedBelief):
        return float(
            b.weight * belief_reward(b.free, a, r, i, terminal)
            + (1 - b.weight) * belief_reward(b.surface, a, r, i, terminal)
        )
    val = float(expected_reward(b.mean, b.cov, a, r, i, terminal))
    if not np.isfinite(val):
        raise FloatingPointError("non-finite belief reward")
    return val
