"""Belief containers and the flat coordinate chart used by the planner.

Beliefs are either a single Gaussian or a two-component mixture whose
second component lives on a constraint surface.  The DDP solver works on
flat vectors, so every belief is mapped through a :class:`Layout`.

All array-level helpers accept arbitrary leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

FULL = "full"
DIAGONAL = "diagonal"


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def clip_psd(cov: np.ndarray) -> np.ndarray:
    """Project a (batch of) symmetric matrices onto the PSD cone."""
    cov = symmetrize(cov)
    vals, vecs = np.linalg.eigh(cov)
    if np.all(vals >= 0.0):
        return cov
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return symmetrize(out)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian over the state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.size

    def is_valid(self) -> bool:
        cov = self.cov
        scale = 1.0 + np.max(np.abs(cov), initial=0.0)
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * scale:
            return False
        tr = np.trace(cov)
        floor = -1e-8 * max(tr, 0.0) / max(self.n, 1)
        return bool(np.linalg.eigvalsh(symmetrize(cov))[0] >= floor - 1e-300)


@dataclass(frozen=True)
class ConstrainedBelief:
    """Mixture of a free Gaussian (weight ``weight``) and a surface Gaussian."""

    free: GaussianBelief
    surface: GaussianBelief
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {self.weight}")
        if self.free.n != self.surface.n:
            raise ValueError("mixture components have different dimensions")

    @property
    def n(self) -> int:
        return self.free.n

    def moments(self) -> GaussianBelief:
        """Moment-matched single Gaussian of the mixture."""
        a = self.weight
        d = self.free.mean - self.surface.mean
        mean = a * self.free.mean + (1 - a) * self.surface.mean
        cov = a * self.free.cov + (1 - a) * self.surface.cov + a * (1 - a) * np.outer(d, d)
        return GaussianBelief(mean, cov)


Belief = Union[GaussianBelief, ConstrainedBelief]


@dataclass(frozen=True)
class Layout:
    """Describes how a belief is flattened into a vector.

    ``scheme`` is ``"full"`` (upper triangle of the covariance) or
    ``"diagonal"``.  For diagonal layouts ``groups`` lists the state indices
    that share one variance slot; indices not covered by any group carry
    zero variance.  ``groups=None`` means one slot per coordinate.
    With ``constrained=True`` the vector holds
    ``[free part, surface part, weight]``.
    """

    n: int
    scheme: str = FULL
    groups: tuple[tuple[int, ...], ...] | None = None
    constrained: bool = False
    _triu: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scheme not in (FULL, DIAGONAL):
            raise ValueError(f"unknown covariance scheme {self.scheme!r}")
        if self.scheme == FULL and self.groups is not None:
            raise ValueError("variance groups only apply to the diagonal scheme")
        if self.groups is not None:
            groups = tuple(tuple(int(i) for i in g) for g in self.groups)
            flat = [i for g in groups for i in g]
            if len(set(flat)) != len(flat) or any(not 0 <= i < self.n for i in flat):
                raise ValueError("variance groups must be disjoint state indices")
            object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "_triu", np.triu_indices(self.n))

    @property
    def cov_size(self) -> int:
        if self.scheme == FULL:
            return self.n * (self.n + 1) // 2
        return self.n if self.groups is None else len(self.groups)

    @property
    def gaussian_size(self) -> int:
        return self.n + self.cov_size

    @property
    def size(self) -> int:
        if self.constrained:
            return 2 * self.gaussian_size + 1
        return self.gaussian_size

    # -- array level -------------------------------------------------------

    def _group_matrix(self) -> np.ndarray:
        """(cov_size, n) 0/1 matrix mapping slots onto diagonal entries."""
        m = np.zeros((self.cov_size, self.n))
        if self.groups is None:
            m[np.arange(self.n), np.arange(self.n)] = 1.0
        else:
            for j, g in enumerate(self.groups):
                m[j, list(g)] = 1.0
        return m

    def pack_gaussian(self, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.shape[-1] != self.n or cov.shape[-2:] != (self.n, self.n):
            raise ValueError(
                f"belief of dimension {mean.shape[-1]} does not match layout dimension {self.n}"
            )
        if self.scheme == FULL:
            iu, ju = self._triu
            slots = symmetrize(cov)[..., iu, ju]
        else:
            diag = np.diagonal(cov, axis1=-2, axis2=-1)
            g = self._group_matrix()
            slots = (diag @ g.T) / g.sum(axis=1)
        return np.concatenate([mean, slots], axis=-1)

    def unpack_gaussian(self, vec: np.ndarray, repair: bool = True,
                        dense: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Decode ``(mean, cov)``; with ``dense=False`` diagonal layouts return variances."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != self.gaussian_size:
            raise ValueError(f"expected {self.gaussian_size} entries, got {vec.shape[-1]}")
        n = self.n
        mean = vec[..., :n]
        slots = vec[..., n:]
        if self.scheme == FULL:
            iu, ju = self._triu
            cov = np.zeros(vec.shape[:-1] + (n, n))
            cov[..., iu, ju] = slots
            cov[..., ju, iu] = slots
            if repair:
                cov = clip_psd(cov)
        else:
            if repair:
                slots = np.clip(slots, 0.0, None)
            diag = slots @ self._group_matrix()
            if not dense:
                return mean, diag
            cov = diag[..., :, None] * np.eye(n)
        return mean, cov

    def pack(self, free_mean, free_cov, surf_mean=None, surf_cov=None, weight=None) -> np.ndarray:
        v1 = self.pack_gaussian(free_mean, free_cov)
        if not self.constrained:
            return v1
        v2 = self.pack_gaussian(surf_mean, surf_cov)
        w = np.asarray(weight, dtype=float)[..., None]
        return np.concatenate([v1, v2, w], axis=-1)

    def unpack(self, vec: np.ndarray, repair: bool = True, dense: bool = True):
        """Return ``(mean, cov)`` or ``(free_mean, free_cov, surf_mean, surf_cov, weight)``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != self.size:
            raise ValueError(f"belief vector has {vec.shape[-1]} entries, layout expects {self.size}")
        if not self.constrained:
            return self.unpack_gaussian(vec, repair, dense)
        g = self.gaussian_size
        m1, c1 = self.unpack_gaussian(vec[..., :g], repair, dense)
        m2, c2 = self.unpack_gaussian(vec[..., g : 2 * g], repair, dense)
        w = vec[..., -1]
        if repair:
            w = np.clip(w, 0.0, 1.0)
        return m1, c1, m2, c2, w

    def mixture_moments(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Moment-matched mean and covariance of the encoded belief."""
        if not self.constrained:
            return self.unpack(vec)
        m1, c1, m2, c2, w = self.unpack(vec)
        a = w[..., None]
        d = m1 - m2
        mean = a * m1 + (1 - a) * m2
        cov = (
            a[..., None] * c1
            + (1 - a)[..., None] * c2
            + (a * (1 - a))[..., None] * d[..., :, None] * d[..., None, :]
        )
        return mean, cov


def vectorize(b: Belief, layout: Layout) -> np.ndarray:
    """Flatten a belief according to ``layout``."""
    if isinstance(b, ConstrainedBelief):
        if not layout.constrained:
            raise ValueError("constrained belief needs a constrained layout")
        return layout.pack(b.free.mean, b.free.cov, b.surface.mean, b.surface.cov, b.weight)
    if layout.constrained:
        raise ValueError("plain Gaussian belief given to a constrained layout")
    return layout.pack(b.mean, b.cov)


def devectorize(v: Sequence[float], layout: Layout) -> Belief:
    """Inverse of :func:`vectorize`, repairing small PSD violations."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("devectorize expects a single belief vector")
    parts = layout.unpack(v)
    if layout.constrained:
        m1, c1, m2, c2, w = parts
        return ConstrainedBelief(GaussianBelief(m1, c1), GaussianBelief(m2, c2), float(w))
    return GaussianBelief(*parts)
