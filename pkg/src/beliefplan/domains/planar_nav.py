"""Planar navigation in a closed room where wall contact is the only way to localize."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..belief import GaussianBelief, Layout
from ..constraint import ConstraintModel, constrained_from_gaussian
from ..filter import DynamicsModel, ObservationModel
from ..rewards import ActionCost, GaussianBumpCost, QuadraticStateCost, StageReward
from .base import DomainSpec


@dataclass
class PlanarNavParams:
    room: tuple = (10.0, 10.0)
    corner_radius: float = 0.0
    start: tuple = (1.5, 8.0)
    start_var: float = 1.0
    target: tuple = (6.0, 1.0)
    obstacles: list = field(default_factory=lambda: [(4.0, 6.5), (5.5, 4.0)])
    obstacle_height: float = 10.0
    obstacle_width: float = 1.0
    process_var: float = 0.01
    observation_var: float = 25.0
    action_weight: float = 0.02
    terminal_weight: float = 10.0
    tau: float = 0.1
    horizon: int = 40

    @classmethod
    def from_mapping(cls, d: dict | None) -> "PlanarNavParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown planar navigation parameters: {sorted(unknown)}")
        return cls(**d)


def room_constraint(width: float, height: float, radius: float = 0.0) -> ConstraintModel:
    """Signed distance to the walls of a (rounded) rectangle, positive inside."""
    if width <= 2 * radius or height <= 2 * radius or radius < 0:
        raise ValueError("degenerate room geometry")
    lo = np.array([radius, radius])
    hi = np.array([width - radius, height - radius])
    normals = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

    def parts(s):
        s = np.asarray(s, dtype=float)
        q = np.clip(s, lo, hi)
        out = s - q
        d_out = np.linalg.norm(out, axis=-1)
        walls = np.stack([s[..., 0] - lo[0], hi[0] - s[..., 0], s[..., 1] - lo[1], hi[1] - s[..., 1]], axis=-1)
        return out, d_out, walls

    def gamma(s):
        out, d_out, walls = parts(s)
        inside = d_out <= 0.0
        return np.where(inside, radius + walls.min(axis=-1), radius - d_out)

    def gamma_grad(s):
        out, d_out, walls = parts(s)
        inside = (d_out <= 0.0)[..., None]
        g_in = normals[np.argmin(walls, axis=-1)]
        g_out = -out / np.where(d_out > 0, d_out, 1.0)[..., None]
        return np.where(inside, g_in, g_out)

    return ConstraintModel(gamma, gamma_grad)


def make_planar_nav(params: PlanarNavParams | dict | None = None) -> DomainSpec:
    """Single-integrator robot in a room; the walls are the only information source."""
    if not isinstance(params, PlanarNavParams):
        params = PlanarNavParams.from_mapping(params)
    P = params
    if P.horizon < 2 or P.tau <= 0:
        raise ValueError("horizon must be >= 2 and tau positive")
    width, height = P.room
    cm = room_constraint(width, height, P.corner_radius)
    start = np.asarray(P.start, dtype=float)
    if cm.value(start) <= 0:
        raise ValueError("start must lie strictly inside the room")

    eye = np.eye(2)
    q_root = np.sqrt(P.process_var / P.tau) * eye
    dyn = DynamicsModel(
        f=lambda s, a: np.broadcast_to(a, np.broadcast_shapes(np.shape(s), np.shape(a))),
        q=lambda s, a: np.broadcast_to(q_root, np.shape(s)[:-1] + (2, 2)),
        tau=P.tau,
        f_jac=lambda s, a: np.zeros(np.shape(s)[:-1] + (2, 2)),
    )
    W = P.observation_var * eye
    obs = ObservationModel(
        w=lambda s: s,
        W=lambda s, a: np.broadcast_to(W, np.shape(s)[:-1] + (2, 2)),
        w_jac=lambda s: np.broadcast_to(eye, np.shape(s)[:-1] + (2, 2)),
    )
    obstacles = np.asarray(P.obstacles, dtype=float).reshape(-1, 2)
    running = [GaussianBumpCost(eye, o, P.obstacle_height, P.obstacle_width) for o in obstacles]
    running.append(ActionCost(P.action_weight * np.ones(2)))
    target = np.asarray(P.target, dtype=float)
    reward = StageReward(running=tuple(running),
                         terminal=(QuadraticStateCost(eye, target, P.terminal_weight),))

    b0 = constrained_from_gaussian(GaussianBelief(start, P.start_var * eye), cm)

    def clearance(S, U):
        if len(obstacles) == 0:
            return float("inf")
        d = np.linalg.norm(S[:, None, :] - obstacles[None], axis=-1)
        return float(d.min())

    return DomainSpec(
        name="planar_nav", n=2, m=2, p=2, dynamics=dyn, observation=obs, reward=reward,
        horizon=P.horizon, initial_belief=b0, layout=Layout(2, constrained=True), constraint=cm,
        metrics={
            "terminal_error": lambda S, U: float(np.linalg.norm(S[-1] - target)),
            "min_obstacle_clearance": clearance,
        },
        params=asdict(P),
    )
