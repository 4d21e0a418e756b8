"""Linear-Gaussian oracle domains: the EKF is exact and DDP reduces to LQR."""
from __future__ import annotations

import numpy as np

from ..belief import GaussianBelief, Layout
from ..ddp import BeliefMDP
from ..filter import DynamicsModel, ObservationModel
from ..rewards import ActionCost, QuadraticStateCost, StageReward
from .base import DomainSpec


def random_lqg_matrices(n: int, m: int, seed: int = 0, p: int | None = None) -> dict:
    """A reproducible, mildly unstable linear system with PD cost matrices."""
    rng = np.random.default_rng(seed)
    p = n if p is None else p
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m)) / np.sqrt(n)
    G = rng.standard_normal((n, n))
    Q = 0.05 * (G @ G.T / n + np.eye(n))
    C = rng.standard_normal((p, n))
    H = rng.standard_normal((p, p))
    W = H @ H.T / p + 0.5 * np.eye(p)
    Mq = rng.standard_normal((n, n))
    Qs = Mq @ Mq.T / n + np.eye(n)
    Mr = rng.standard_normal((m, m))
    R = Mr @ Mr.T / m + 0.5 * np.eye(m)
    return dict(A=A, B=B, Q=Q, C=C, W=W, Qs=Qs, R=R, Qf=5.0 * Qs)


def make_lqg_test(n: int = 2, m: int = 1, horizon: int = 20, seed: int = 0, tau: float = 0.1,
                  **overrides) -> DomainSpec:
    """Linear dynamics ``s' = A s + B a`` with constant noise and quadratic reward."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    mats = random_lqg_matrices(n, m, seed)
    mats.update({k: np.asarray(v, dtype=float) for k, v in overrides.items()})
    A, B, Q, C, W = mats["A"], mats["B"], mats["Q"], mats["C"], mats["W"]
    p = C.shape[0]
    q_root = np.linalg.cholesky(Q / tau)

    dyn = DynamicsModel(
        f=lambda s, a: ((s @ (A - np.eye(n)).T) + a @ B.T) / tau,
        q=lambda s, a: np.broadcast_to(q_root, np.shape(s)[:-1] + (n, n)),
        tau=tau,
        f_jac=lambda s, a: np.broadcast_to((A - np.eye(n)) / tau, np.shape(s)[:-1] + (n, n)),
    )
    obs = ObservationModel(
        w=lambda s: s @ C.T,
        W=lambda s, a: np.broadcast_to(W, np.shape(s)[:-1] + (p, p)),
        w_jac=lambda s: np.broadcast_to(C, np.shape(s)[:-1] + (p, n)),
    )
    Lq = np.linalg.cholesky(mats["Qs"]).T
    Lf = np.linalg.cholesky(mats["Qf"]).T
    reward = StageReward(
        running=(QuadraticStateCost(Lq, np.zeros(n)), ActionCost(mats["R"])),
        terminal=(QuadraticStateCost(Lf, np.zeros(n)),),
    )
    rng = np.random.default_rng(seed + 1)
    b0 = GaussianBelief(rng.standard_normal(n), 0.5 * np.eye(n))
    return DomainSpec(
        name="lqg", n=n, m=m, p=p, dynamics=dyn, observation=obs, reward=reward,
        horizon=horizon, initial_belief=b0, layout=Layout(n),
        metrics={"terminal_error": lambda S, U: float(np.linalg.norm(S[-1]))},
        params=dict(n=n, m=m, horizon=horizon, seed=seed, tau=tau),
    )


def make_lqr_mdp(A, B, Qs, R, Qf, x0, horizon: int) -> BeliefMDP:
    """Deterministic LQR problem exposed as a :class:`BeliefMDP` (reward = -cost)."""
    A, B, Qs, R, Qf = (np.asarray(M, dtype=float) for M in (A, B, Qs, R, Qf))

    def step(X, U, I):
        return X @ A.T + U @ B.T

    def reward(X, U, I):
        return -(np.einsum("bi,ij,bj->b", X, Qs, X) + np.einsum("bi,ij,bj->b", U, R, U))

    def terminal(X):
        return -np.einsum("bi,ij,bj->b", X, Qf, X)

    return BeliefMDP(step, reward, terminal, horizon, A.shape[0], B.shape[1], np.asarray(x0, dtype=float))
