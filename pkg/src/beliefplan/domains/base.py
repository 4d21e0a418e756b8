from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..belief import ConstrainedBelief, GaussianBelief, Layout, vectorize
from ..constraint import ConstraintModel, mixture_step_arrays
from ..ddp import BeliefMDP
from ..filter import DynamicsModel, ObservationModel, marginalized_arrays
from ..rewards import expected_reward


@dataclass
class DomainSpec:
    """Everything needed to plan and execute in one POMDP domain.

    ``reward`` is a :class:`~beliefplan.rewards.StageReward` or any object
    with ``__call__(s, a, i)`` and ``terminal_value(s)``.  ``metrics`` maps
    names to functions of ``(true_states, actions)`` used when summarizing
    rollouts.
    """

    name: str
    n: int
    m: int
    p: int
    dynamics: DynamicsModel
    observation: ObservationModel
    reward: object
    horizon: int
    initial_belief: GaussianBelief | ConstrainedBelief
    layout: Layout
    constraint: Optional[ConstraintModel] = None
    initial_actions: Optional[np.ndarray] = None
    metrics: dict[str, Callable] = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.layout.n != self.n:
            raise ValueError("layout dimension does not match the state dimension")
        if self.layout.constrained != (self.constraint is not None):
            raise ValueError("constrained layouts go together with a constraint model")

    @property
    def belief_dim(self) -> int:
        return self.layout.size

    def initial_vector(self) -> np.ndarray:
        return vectorize(self.initial_belief, self.layout)

    def belief_step(self, X, U, I=None):
        """Deterministic belief update on (batches of) belief vectors."""
        layout = self.layout
        if layout.constrained:
            parts = layout.unpack(X)
            out = mixture_step_arrays(*parts, U, self.dynamics, self.observation, self.constraint)
            return layout.pack(*out)
        mean, cov = layout.unpack(X)
        return layout.pack(*marginalized_arrays(mean, cov, U, self.dynamics, self.observation))

    def belief_reward(self, X, U, I):
        return self._expected(X, U, I, terminal=False)

    def belief_terminal_reward(self, X):
        return self._expected(X, None, None, terminal=True)

    def _expected(self, X, U, I, terminal):
        layout = self.layout
        if layout.constrained:
            m1, c1, m2, c2, w = layout.unpack(X, dense=False)
            r1 = expected_reward(m1, c1, U, self.reward, I, terminal)
            r2 = expected_reward(m2, c2, U, self.reward, I, terminal)
            return w * r1 + (1 - w) * r2
        mean, cov = layout.unpack(X, dense=False)
        return expected_reward(mean, cov, U, self.reward, I, terminal)

    def to_mdp(self) -> BeliefMDP:
        return BeliefMDP(
            step=self.belief_step,
            reward=self.belief_reward,
            terminal_reward=self.belief_terminal_reward,
            horizon=self.horizon,
            belief_dim=self.belief_dim,
            action_dim=self.m,
            initial_belief=self.initial_vector(),
        )
