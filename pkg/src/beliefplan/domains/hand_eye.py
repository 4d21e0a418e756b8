"""Two hands, one foveated eye, a target and four obstacles in a plane.

State (n=16) stacks eight planar positions: eye, hand 1, hand 2, target,
obstacles 1-4.  Actions (m=6) are velocities of eye, hand 1 and hand 2.
Every element is observed, with noise that is small only near the gaze
point and while the eye moves slowly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..belief import DIAGONAL, GaussianBelief, Layout
from ..filter import DynamicsModel, ObservationModel
from ..rewards import ActionCost, GaussianBumpCost, QuadraticStateCost, StageReward
from .base import DomainSpec

EYE, HAND1, HAND2, TARGET = 0, 1, 2, 3
OBSTACLES = (4, 5, 6, 7)
N_ELEMENTS = 8


def element(j: int) -> slice:
    return slice(2 * j, 2 * j + 2)


@dataclass
class HandEyeParams:
    eta: float = 0.05
    eye: tuple = (0.0, 0.0)
    hands: list = field(default_factory=lambda: [(-0.6, -0.8), (0.6, -0.8)])
    target: tuple = (0.0, 0.8)
    obstacles: list = field(default_factory=lambda: [(-0.45, -0.25), (-0.3, 0.35), (0.45, -0.25), (0.3, 0.35)])
    hand_var: float = 0.01
    target_var: float = 0.02
    obstacle_var: float = 0.03
    hand_process_var: float = 5e-4
    observation_scale: float = 1.0
    saccade_inhibition: float = 0.01
    terminal_weight: float = 100.0
    obstacle_height: float = 10.0
    obstacle_width: float = 0.15
    hand_action_weight: float = 0.05
    eye_action_weight: float = 1e-4
    tau: float = 0.05
    horizon: int = 60

    @classmethod
    def from_mapping(cls, d: dict | None) -> "HandEyeParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hand-eye parameters: {sorted(unknown)}")
        return cls(**d)


def foveal_noise(s, a_eye, eta: float, inhibition: float = 0.01) -> np.ndarray:
    """Per-element observation noise ``1 - exp(-|s_e - s_j|^2 / 2 eta) + c |a_e|^2``.

    ``s`` has shape ``(..., 16)``; returns ``(..., 8)``.
    """
    s = np.asarray(s, dtype=float)
    pos = s.reshape(s.shape[:-1] + (N_ELEMENTS, 2))
    d2 = np.sum((pos - pos[..., :1, :]) ** 2, axis=-1)
    speed2 = np.sum(np.asarray(a_eye, dtype=float) ** 2, axis=-1)[..., None]
    return 1.0 - np.exp(-d2 / (2.0 * eta)) + inhibition * speed2


def difference_map(i: int, j: int) -> np.ndarray:
    """2x16 matrix selecting ``s_i - s_j``."""
    D = np.zeros((2, 2 * N_ELEMENTS))
    D[:, element(i)] = np.eye(2)
    D[:, element(j)] -= np.eye(2)
    return D


def make_hand_eye(eta: float | None = None, params: HandEyeParams | dict | None = None) -> DomainSpec:
    if not isinstance(params, HandEyeParams):
        params = HandEyeParams.from_mapping(params)
    if eta is not None:
        params = HandEyeParams(**{**asdict(params), "eta": eta})
    P = params
    if not P.eta > 0:
        raise ValueError("fovea parameter eta must be positive")
    if len(P.hands) != 2 or len(P.obstacles) != 4:
        raise ValueError("hand-eye scene needs two hands and four obstacles")
    n, m = 16, 6

    def f(s, a):
        shape = np.broadcast_shapes(np.shape(s)[:-1], np.shape(a)[:-1])
        out = np.zeros(shape + (n,))
        out[..., :m] = a
        return out

    q_diag = np.zeros(n)
    q_diag[2:6] = np.sqrt(P.hand_process_var / P.tau)
    q_mat = np.diag(q_diag)
    dyn = DynamicsModel(
        f=f,
        q=lambda s, a: np.broadcast_to(q_mat, np.shape(s)[:-1] + (n, n)),
        tau=P.tau,
        f_jac=lambda s, a: np.zeros(np.shape(s)[:-1] + (n, n)),
    )

    def W(s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        per = P.observation_scale * foveal_noise(s, a[..., 0:2], P.eta, P.saccade_inhibition)
        diag = np.repeat(per, 2, axis=-1)
        return diag[..., :, None] * np.eye(n)

    eye_n = np.eye(n)
    obs = ObservationModel(
        w=lambda s: np.asarray(s, dtype=float),
        W=W,
        w_jac=lambda s: np.broadcast_to(eye_n, np.shape(s)[:-1] + (n, n)),
    )

    running = [
        GaussianBumpCost(difference_map(h, l), np.zeros(2), P.obstacle_height, P.obstacle_width)
        for h in (HAND1, HAND2) for l in OBSTACLES
    ]
    running.append(ActionCost(np.array([P.eye_action_weight] * 2 + [P.hand_action_weight] * 4)))
    terminal = tuple(QuadraticStateCost(difference_map(h, TARGET), np.zeros(2), P.terminal_weight)
                     for h in (HAND1, HAND2))
    reward = StageReward(running=tuple(running), terminal=terminal)

    mean = np.concatenate([P.eye, *P.hands, P.target, *P.obstacles]).astype(float)
    var = np.repeat([0.0, P.hand_var, P.hand_var, P.target_var] + [P.obstacle_var] * 4, 2)
    b0 = GaussianBelief(mean, np.diag(var))
    groups = tuple((2 * j, 2 * j + 1) for j in range(1, N_ELEMENTS))
    layout = Layout(n, DIAGONAL, groups)

    def clearance(S, U):
        pos = S.reshape(S.shape[0], N_ELEMENTS, 2)
        hands = pos[:, [HAND1, HAND2]]
        obst = pos[:, list(OBSTACLES)]
        return float(np.linalg.norm(hands[:, :, None] - obst[:, None], axis=-1).min())

    def terminal_error(S, U):
        pos = S[-1].reshape(N_ELEMENTS, 2)
        return float(np.mean(np.linalg.norm(pos[[HAND1, HAND2]] - pos[TARGET], axis=-1)))

    return DomainSpec(
        name="hand_eye", n=n, m=m, p=n, dynamics=dyn, observation=obs, reward=reward,
        horizon=P.horizon, initial_belief=b0, layout=layout,
        metrics={"min_obstacle_clearance": clearance, "terminal_error": terminal_error},
        params=asdict(P),
    )
