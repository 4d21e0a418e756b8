"""Finite-horizon DDP (Gauss-Newton / iLQR form) on deterministic belief dynamics.

The solver maximizes ``sum_i r(b_i, a_i, i) + r_N(b_N)``.  Internally it
works with the cost ``-r``.  All model derivatives come from central
finite differences that are evaluated for every time step in one batched
call, which is why :class:`BeliefMDP` callables must broadcast over a
leading batch axis.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import NonFiniteError

log = logging.getLogger(__name__)

Array = np.ndarray

JAC_STEP = 1e-5
HESS_STEP = 1e-3
CHUNK = 16384


@dataclass
class BeliefMDP:
    """Deterministic control problem over belief vectors.

    ``step(X, U, I)`` maps ``(B, d)`` beliefs, ``(B, m)`` actions and
    ``(B,)`` integer time indices to ``(B, d)`` next beliefs; ``reward``
    returns ``(B,)``; ``terminal_reward(X)`` returns ``(B,)``.
    ``horizon`` counts beliefs, so there are ``horizon - 1`` actions.
    """

    step: Callable[[Array, Array, Array], Array]
    reward: Callable[[Array, Array, Array], Array]
    terminal_reward: Callable[[Array], Array]
    horizon: int
    belief_dim: int
    action_dim: int
    initial_belief: Array

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        self.initial_belief = np.asarray(self.initial_belief, dtype=float)


@dataclass
class SolverOptions:
    max_iterations: int = 500
    rel_tol: float = 1e-7
    patience: int = 2
    reg_init: float = 1e-9
    reg_min: float = 1e-9
    reg_max: float = 1e9
    reg_increase: float = 10.0
    reg_decrease: float = 2.0
    min_step: float = 1e-4

    @classmethod
    def from_mapping(cls, options: Mapping | "SolverOptions" | None) -> "SolverOptions":
        if options is None:
            return cls()
        if isinstance(options, SolverOptions):
            return options
        known = {f.name for f in fields(cls)}
        unknown = set(options) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**dict(options))


@dataclass
class Trajectory:
    beliefs: Array  # (N, d)
    actions: Array  # (N-1, m)
    total_reward: float


@dataclass(frozen=True)
class SolveReport:
    nominal_beliefs: Array
    nominal_actions: Array
    gains: Array
    feedforward: Array
    cost_log: tuple
    iterations: int
    converged: bool
    wall_time: float
    regularization: float = 0.0

    @property
    def total_reward(self) -> float:
        return self.cost_log[-1]


# -- evaluation helpers ------------------------------------------------------


def _chunked(fun, *arrays):
    B = arrays[0].shape[0]
    if B <= CHUNK:
        return np.asarray(fun(*arrays), dtype=float)
    out = [np.asarray(fun(*(a[s : s + CHUNK] for a in arrays)), dtype=float) for s in range(0, B, CHUNK)]
    return np.concatenate(out, axis=0)


def rollout_actions(mdp: BeliefMDP, actions: Array) -> Trajectory:
    """Open-loop rollout from the MDP's initial belief."""
    actions = np.asarray(actions, dtype=float).reshape(mdp.horizon - 1, mdp.action_dim)
    X = np.empty((mdp.horizon, mdp.belief_dim))
    X[0] = mdp.initial_belief
    for t in range(mdp.horizon - 1):
        X[t + 1] = mdp.step(X[t][None], actions[t][None], np.array([t]))[0]
    return Trajectory(X, actions, total_reward(mdp, X, actions))


def total_reward(mdp: BeliefMDP, X: Array, U: Array) -> float:
    T = U.shape[0]
    run = _chunked(lambda x, u, i: mdp.reward(x, u, i), X[:-1], U, np.arange(T))
    term = mdp.terminal_reward(X[-1][None])[0]
    tot = float(np.sum(run) + term)
    return tot if np.isfinite(tot) else -np.inf


# -- finite-difference derivatives -------------------------------------------


def _dynamics_jacobians(mdp: BeliefMDP, X: Array, U: Array):
    T, d, m = U.shape[0], mdp.belief_dim, mdp.action_dim
    D = d + m
    Z = np.concatenate([X[:-1], U], axis=1)
    h = JAC_STEP * (1.0 + np.abs(Z))
    pert = h[:, :, None] * np.eye(D)[None]  # (T, D, D): row j perturbs coordinate j
    Zp = (Z[:, None, :] + pert).reshape(-1, D)
    Zm = (Z[:, None, :] - pert).reshape(-1, D)
    idx = np.repeat(np.arange(T), D)
    both = np.concatenate([Zp, Zm], axis=0)
    out = _chunked(lambda z, i: mdp.step(z[:, :d], z[:, d:], i), both, np.concatenate([idx, idx]))
    fp, fm = out[: T * D].reshape(T, D, d), out[T * D :].reshape(T, D, d)
    jac = np.swapaxes((fp - fm) / (2.0 * h[:, :, None]), 1, 2)  # (T, d, D)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteError("non-finite belief dynamics derivative")
    return jac[:, :, :d], jac[:, :, d:]


def _hessian_stencil(Z: Array, hg: Array, hh: Array):
    """Stacked evaluation points for gradient and Hessian of a scalar function.

    Z: (T, D). Returns points (T, P, D) and a function that maps values
    (T, P) to (grad (T, D), hess (T, D, D)).
    """
    T, D = Z.shape
    iu, ju = np.triu_indices(D, 1)
    eye = np.eye(D)
    pts = [Z[:, None, :]]
    pts.append(Z[:, None, :] + hg[:, :, None] * eye)
    pts.append(Z[:, None, :] - hg[:, :, None] * eye)
    pts.append(Z[:, None, :] + hh[:, :, None] * eye)
    pts.append(Z[:, None, :] - hh[:, :, None] * eye)
    ei = hh[:, iu, None] * eye[iu][None]  # (T, K, D)
    ej = hh[:, ju, None] * eye[ju][None]
    for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        pts.append(Z[:, None, :] + si * ei + sj * ej)
    P = np.concatenate(pts, axis=1)
    K = iu.size

    def finish(vals):
        f0 = vals[:, 0]
        o = 1
        gp, gm = vals[:, o : o + D], vals[:, o + D : o + 2 * D]
        o += 2 * D
        hp, hm = vals[:, o : o + D], vals[:, o + D : o + 2 * D]
        o += 2 * D
        pp, pm, mp, mm = (vals[:, o + q * K : o + (q + 1) * K] for q in range(4))
        grad = (gp - gm) / (2.0 * hg)
        hess = np.zeros((T, D, D))
        hess[:, np.arange(D), np.arange(D)] = (hp - 2.0 * f0[:, None] + hm) / hh**2
        off = (pp - pm - mp + mm) / (4.0 * hh[:, iu] * hh[:, ju])
        hess[:, iu, ju] = off
        hess[:, ju, iu] = off
        return grad, hess

    return P, finish


def _reward_derivatives(mdp: BeliefMDP, X: Array, U: Array):
    T, d = U.shape[0], mdp.belief_dim
    Z = np.concatenate([X[:-1], U], axis=1)
    P, finish = _hessian_stencil(Z, JAC_STEP * (1 + np.abs(Z)), HESS_STEP * (1 + np.abs(Z)))
    npts = P.shape[1]
    flat = P.reshape(-1, Z.shape[1])
    idx = np.repeat(np.arange(T), npts)
    vals = _chunked(lambda z, i: mdp.reward(z[:, :d], z[:, d:], i), flat, idx).reshape(T, npts)
    g, H = finish(vals)

    XN = X[-1][None]
    PN, finN = _hessian_stencil(XN, JAC_STEP * (1 + np.abs(XN)), HESS_STEP * (1 + np.abs(XN)))
    valsN = np.asarray(mdp.terminal_reward(PN[0]), dtype=float)[None]
    gN, HN = finN(valsN)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(HN))):
        raise NonFiniteError("non-finite reward derivative")
    return g, H, gN[0], HN[0]


@dataclass
class Linearization:
    """Local model in cost form (cost = -reward)."""

    fx: Array
    fu: Array
    lx: Array
    lu: Array
    lxx: Array
    luu: Array
    lux: Array
    Vx_final: Array
    Vxx_final: Array


def linearize(mdp: BeliefMDP, traj: Trajectory) -> Linearization:
    d = mdp.belief_dim
    fx, fu = _dynamics_jacobians(mdp, traj.beliefs, traj.actions)
    g, H, gN, HN = _reward_derivatives(mdp, traj.beliefs, traj.actions)
    return Linearization(
        fx=fx, fu=fu,
        lx=-g[:, :d], lu=-g[:, d:],
        lxx=-H[:, :d, :d], luu=-H[:, d:, d:], lux=-H[:, d:, :d],
        Vx_final=-gN, Vxx_final=-HN,
    )


class BackwardPassFailure(Exception):
    pass


def backward_pass(mdp: BeliefMDP, nominal: Trajectory, reg: float, lin: Optional[Linearization] = None):
    """Quadratic value recursion around ``nominal``.

    Returns ``(L, k, expected)`` where ``L`` are the ``(N-1, m, d)`` feedback
    gains, ``k`` the feedforward terms and ``expected`` the pair of
    coefficients ``(e1, e2)`` such that a step of length ``eps`` is
    predicted to raise the total reward by ``eps*e1 + eps**2*e2``.
    ``reg`` is added to the action Hessian of the cost, i.e. it makes the
    reward's action Hessian more negative definite.
    """
    if lin is None:
        lin = linearize(mdp, nominal)
    T = nominal.actions.shape[0]
    m, d = mdp.action_dim, mdp.belief_dim
    L = np.zeros((T, m, d))
    k = np.zeros((T, m))
    Vx = lin.Vx_final.copy()
    Vxx = 0.5 * (lin.Vxx_final + lin.Vxx_final.T)
    e1 = e2 = 0.0
    eye = np.eye(m)
    for t in range(T - 1, -1, -1):
        fx, fu = lin.fx[t], lin.fu[t]
        Qx = lin.lx[t] + fx.T @ Vx
        Qu = lin.lu[t] + fu.T @ Vx
        VxxFx = Vxx @ fx
        Qxx = lin.lxx[t] + fx.T @ VxxFx
        Quu = lin.luu[t] + fu.T @ Vxx @ fu
        Qux = lin.lux[t] + fu.T @ VxxFx
        Quu = 0.5 * (Quu + Quu.T)
        Quu_reg = Quu + reg * eye
        try:
            chol = np.linalg.cholesky(Quu_reg)
        except np.linalg.LinAlgError:
            raise BackwardPassFailure(f"action Hessian not definite at step {t}") from None
        sol = np.linalg.solve(chol.T, np.linalg.solve(chol, np.column_stack([Qu, Qux])))
        k[t] = -sol[:, 0]
        L[t] = -sol[:, 1:]
        Vx = Qx + L[t].T @ Quu @ k[t] + L[t].T @ Qu + Qux.T @ k[t]
        Vxx = Qxx + L[t].T @ Quu @ L[t] + L[t].T @ Qux + Qux.T @ L[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
        e1 -= k[t] @ Qu
        e2 -= 0.5 * k[t] @ Quu @ k[t]
        if not (np.all(np.isfinite(Vxx)) and np.all(np.isfinite(Vx))):
            raise BackwardPassFailure("non-finite value function")
    return L, k, (e1, e2)


def objective_gradient(mdp: BeliefMDP, nominal: Trajectory, lin: Optional[Linearization] = None) -> Array:
    """Gradient of the total reward with respect to the open-loop actions (adjoint method)."""
    if lin is None:
        lin = linearize(mdp, nominal)
    T = nominal.actions.shape[0]
    lam = -lin.Vx_final
    grad = np.zeros((T, mdp.action_dim))
    for t in range(T - 1, -1, -1):
        grad[t] = -lin.lu[t] + lin.fu[t].T @ lam
        lam = -lin.lx[t] + lin.fx[t].T @ lam
    return grad


def forward_pass(mdp: BeliefMDP, nominal: Trajectory, gains: Array, feedforward: Array,
                 step_length: float) -> Trajectory:
    """Closed-loop rollout ``a = a_bar + eps*k + L (b - b_bar)``."""
    T = nominal.actions.shape[0]
    X = np.empty_like(nominal.beliefs)
    U = np.empty_like(nominal.actions)
    X[0] = nominal.beliefs[0]
    for t in range(T):
        U[t] = nominal.actions[t] + step_length * feedforward[t] + gains[t] @ (X[t] - nominal.beliefs[t])
        X[t + 1] = mdp.step(X[t][None], U[t][None], np.array([t]))[0]
        if not np.all(np.isfinite(X[t + 1])):
            return Trajectory(X, U, -np.inf)
    return Trajectory(X, U, total_reward(mdp, X, U))


def solve(mdp: BeliefMDP, initial_actions: Optional[Array] = None, options=None) -> SolveReport:
    """Run DDP to convergence from ``initial_actions`` (zeros by default)."""
    opts = SolverOptions.from_mapping(options)
    start = time.perf_counter()
    T = mdp.horizon - 1
    if initial_actions is None:
        initial_actions = np.zeros((T, mdp.action_dim))
    initial_actions = np.asarray(initial_actions, dtype=float)
    if initial_actions.shape != (T, mdp.action_dim):
        raise ValueError(f"initial actions must have shape {(T, mdp.action_dim)}, got {initial_actions.shape}")

    traj = rollout_actions(mdp, initial_actions)
    if not np.isfinite(traj.total_reward):
        raise NonFiniteError("initial rollout is not finite")
    reg = opts.reg_init
    cost_log = [traj.total_reward]
    L = np.zeros((T, mdp.action_dim, mdp.belief_dim))
    k = np.zeros((T, mdp.action_dim))
    converged = False
    quiet = 0
    iterations = 0
    lin = None
    while iterations < opts.max_iterations:
        if lin is None:
            lin = linearize(mdp, traj)
            iterations += 1
        try:
            L, k, (e1, e2) = backward_pass(mdp, traj, reg, lin)
        except BackwardPassFailure:
            reg *= opts.reg_increase
            if reg > opts.reg_max:
                break
            continue

        scale = max(abs(traj.total_reward), 1e-8)
        if e1 + e2 <= opts.rel_tol * scale:
            converged = True
            break

        eps = 1.0
        accepted = None
        while eps >= opts.min_step:
            cand = forward_pass(mdp, traj, L, k, eps)
            if cand.total_reward > traj.total_reward:
                accepted = cand
                break
            eps *= 0.5

        if accepted is None:
            reg *= opts.reg_increase
            if reg > opts.reg_max:
                break
            continue

        rel = (accepted.total_reward - traj.total_reward) / scale
        traj = accepted
        cost_log.append(traj.total_reward)
        lin = None
        reg = max(reg / opts.reg_decrease, opts.reg_min)
        log.debug("iter %d reward %.9g step %.3g reg %.2g", iterations, traj.total_reward, eps, reg)
        quiet = quiet + 1 if rel < opts.rel_tol else 0
        if quiet >= opts.patience:
            converged = True
            break

    if lin is None:
        lin = linearize(mdp, traj)
    # Gains reported for the final nominal.
    try:
        L, k, _ = backward_pass(mdp, traj, reg, lin)
    except BackwardPassFailure:
        pass
    return SolveReport(
        nominal_beliefs=traj.beliefs,
        nominal_actions=traj.actions,
        gains=L,
        feedforward=k,
        cost_log=tuple(cost_log),
        iterations=iterations,
        converged=converged,
        wall_time=time.perf_counter() - start,
        regularization=reg,
    )


def continuation_solve(mdp_family: Callable[[float], BeliefMDP], schedule: Sequence[float],
                       initial_actions: Optional[Array] = None, options=None) -> list[SolveReport]:
    """Solve a sequence of problems, warm-starting each from the previous actions."""
    if len(schedule) == 0:
        raise ValueError("continuation schedule is empty")
    reports = []
    actions = initial_actions
    for value in schedule:
        report = solve(mdp_family(value), actions, options)
        log.info("stage %s: reward %.6g after %d iterations", value, report.total_reward, report.iterations)
        reports.append(report)
        actions = report.nominal_actions
    return reports
