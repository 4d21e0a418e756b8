"""Run a planned locally-linear policy against simulated ground truth.

At every step the true state is advanced with sampled process noise,
pushed back inside the constraint if it penetrated, observed with sampled
observation noise, and the estimator (EKF, or the constrained mixture
filter) folds in the observation.  The next action comes from the
feedback law ``a = a_bar[i] + L[i] (b_hat - b_bar[i])`` evaluated in
belief-vector coordinates.

Time indices are 0-based: action ``i`` is applied to belief ``i``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .belief import ConstrainedBelief, GaussianBelief, Layout, vectorize
from .constraint import ConstraintModel, constrained_correct
from .ddp import SolveReport
from .errors import BeliefPlanError, NonFiniteError
from .filter import ekf_correct, euler_step

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class LinearPolicy:
    """Nominal beliefs ``(N, d)``, nominal actions ``(N-1, m)`` and gains ``(N-1, m, d)``."""

    nominal_beliefs: Array
    nominal_actions: Array
    gains: Array
    layout: Layout

    def __post_init__(self):
        X = np.asarray(self.nominal_beliefs, dtype=float)
        U = np.asarray(self.nominal_actions, dtype=float)
        L = np.asarray(self.gains, dtype=float)
        if X.ndim != 2 or U.ndim != 2 or L.ndim != 3:
            raise ValueError("policy arrays must have shapes (N, d), (N-1, m), (N-1, m, d)")
        if U.shape[0] != X.shape[0] - 1 or L.shape != (U.shape[0], U.shape[1], X.shape[1]):
            raise ValueError(
                f"inconsistent policy shapes: beliefs {X.shape}, actions {U.shape}, gains {L.shape}"
            )
        if X.shape[1] != self.layout.size:
            raise ValueError("nominal beliefs do not match the layout size")
        for name, arr in (("nominal_beliefs", X), ("nominal_actions", U), ("gains", L)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_report(cls, report: SolveReport, layout: Layout) -> "LinearPolicy":
        return cls(report.nominal_beliefs, report.nominal_actions, report.gains, layout)

    @property
    def horizon(self) -> int:
        return self.nominal_beliefs.shape[0]


def policy_action(policy: LinearPolicy, b_hat, i: int) -> Array:
    """Feedback action at step ``i`` for a belief (object or vector)."""
    T = policy.nominal_actions.shape[0]
    if not 0 <= i < T:
        raise IndexError(f"time index {i} outside [0, {T - 1}]")
    if isinstance(b_hat, (GaussianBelief, ConstrainedBelief)):
        b_hat = vectorize(b_hat, policy.layout)
    dev = np.asarray(b_hat, dtype=float) - policy.nominal_beliefs[i]
    return policy.nominal_actions[i] + policy.gains[i] @ dev


@dataclass
class RolloutRecord:
    """One simulated execution.

    ``failed`` marks a simulation or estimator blow-up; the arrays then end
    at the last good step (the action that triggered it is kept).
    """

    seed: int
    true_states: Array  # (N, n)
    observations: Array  # (N-1, p)
    beliefs: Array  # (N, d) estimator beliefs in layout coordinates
    actions: Array  # (N-1, m)
    realized_reward: float
    failed: bool = False
    message: str = ""
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "failed": bool(self.failed),
            "message": self.message,
            "realized_reward": float(self.realized_reward),
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "true_states": self.true_states.tolist(),
            "observations": self.observations.tolist(),
            "beliefs": self.beliefs.tolist(),
            "actions": self.actions.tolist(),
        }


def enforce_constraint(s: Array, cm: Optional[ConstraintModel], max_iter: int = 20) -> Array:
    """Move an infeasible state back onto ``gamma = 0`` along the constraint gradient."""
    if cm is None:
        return s
    s = np.array(s, dtype=float)
    for _ in range(max_iter):
        g = float(cm.value(s))
        if g >= 0.0:
            break
        grad = cm.grad(s)
        s = s - g * grad / float(grad @ grad)
    else:
        # Newton iterations can stop a hair short; nudge onto the feasible side.
        if float(cm.value(s)) < 0.0:
            grad = cm.grad(s)
            s = s + 1e-12 * grad / np.linalg.norm(grad)
    return s


def _sample_gaussian(rng: np.random.Generator, cov: Array) -> Array:
    """Zero-mean sample via a symmetric square root (works for singular ``cov``)."""
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return root @ rng.standard_normal(cov.shape[0])


def _estimator_step(domain, b, a, z):
    if domain.constraint is not None:
        return constrained_correct(b, a, z, domain.dynamics, domain.observation, domain.constraint)
    return ekf_correct(b, a, z, domain.dynamics, domain.observation)


def rollout(policy: LinearPolicy, domain, true_init=None, seed: int = 0,
            process_noise: bool = True, observation_noise: bool = True,
            initial_belief=None) -> RolloutRecord:
    """Execute ``policy`` in ``domain`` starting from the true state ``true_init``.

    ``true_init`` defaults to the mean of the domain's initial belief;
    ``initial_belief`` (default: the domain's) seeds the estimator.  The
    two noise sources use independent streams derived from ``seed``, so a
    seed always yields the same record and switching one source off does
    not change the draws of the other.
    """
    if policy.horizon != domain.horizon:
        raise ValueError("policy horizon does not match the domain horizon")
    dyn, obs, cm = domain.dynamics, domain.observation, domain.constraint
    b = domain.initial_belief if initial_belief is None else initial_belief
    if true_init is None:
        true_init = b.moments().mean if isinstance(b, ConstrainedBelief) else b.mean
    s = enforce_constraint(np.asarray(true_init, dtype=float), cm)
    proc_ss, obs_ss = np.random.SeedSequence(seed).spawn(2)
    proc_rng, obs_rng = np.random.default_rng(proc_ss), np.random.default_rng(obs_ss)

    T = domain.horizon - 1
    states, zs, beliefs, actions = [s], [], [vectorize(b, domain.layout)], []
    failed, message = False, ""
    for i in range(T):
        a = policy_action(policy, beliefs[-1], i)
        actions.append(a)
        try:
            s_next = euler_step(s, a, dyn)
            eps = _sample_gaussian(proc_rng, dyn.process_cov(s, a))
            if process_noise:
                s_next = s_next + eps
            s_next = enforce_constraint(s_next, cm)
            z = np.asarray(obs.w(s_next), dtype=float)
            nu = _sample_gaussian(obs_rng, np.asarray(obs.W(s_next, a), dtype=float))
            if observation_noise:
                z = z + nu
            b = _estimator_step(domain, b, a, z)
            v = vectorize(b, domain.layout)
            if not np.all(np.isfinite(v)):
                raise NonFiniteError("estimator produced a non-finite belief")
        except (BeliefPlanError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            failed, message = True, f"step {i}: {exc}"
            log.warning("rollout seed %d diverged at %s", seed, message)
            break
        s = s_next
        states.append(s)
        zs.append(z)
        beliefs.append(v)

    S = np.array(states)
    U = np.array(actions)
    reward = float(sum(domain.reward(S[t], U[t], t) for t in range(len(U))))
    if not failed:
        reward += float(domain.reward.terminal_value(S[-1]))
    metrics = {} if failed else {name: fn(S, U) for name, fn in domain.metrics.items()}
    return RolloutRecord(
        seed=seed, true_states=S, observations=np.array(zs).reshape(len(zs), domain.p),
        beliefs=np.array(beliefs), actions=U, realized_reward=reward,
        failed=failed, message=message, metrics=metrics,
    )


def rollout_many(policy: LinearPolicy, domain, seeds: Sequence[int], true_init=None,
                 max_workers: Optional[int] = None, **kwargs) -> list[RolloutRecord]:
    """Independent rollouts for several seeds, run concurrently, returned in seed order.

    ``true_init`` is one state shared by all seeds or an ``(S, n)`` array
    with one state per seed.
    """
    seeds = [int(s) for s in seeds]
    if true_init is not None and np.ndim(true_init) == 2:
        if len(true_init) != len(seeds):
            raise ValueError("need one initial state per seed")
        inits = [np.asarray(x, dtype=float) for x in true_init]
    else:
        inits = [true_init] * len(seeds)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(rollout, policy, domain, x, s, **kwargs) for x, s in zip(inits, seeds)]
        return [f.result() for f in futures]


def replay_deviation(policy: LinearPolicy, domain, record: RolloutRecord) -> float:
    """Max deviation of realized true states from the nominal (moment) means."""
    layout = domain.layout
    if layout.constrained:
        means, _ = layout.mixture_moments(policy.nominal_beliefs)
    else:
        means = policy.nominal_beliefs[:, : layout.n]
    k = record.true_states.shape[0]
    return float(np.max(np.abs(record.true_states - means[:k])))
