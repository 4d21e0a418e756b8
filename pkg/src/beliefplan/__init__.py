"""Belief-space trajectory optimization for continuous POMDPs."""
from .belief import ConstrainedBelief, GaussianBelief, Layout, devectorize, vectorize
from .constraint import (
    ConstraintModel,
    constrained_update,
    project_to_manifold,
    reduce_pair,
    truncate_gaussian,
    truncated_moments_1d,
)
from .ddp import BeliefMDP, SolveReport, continuation_solve, solve
from .filter import DynamicsModel, ObservationModel, ekf_correct, ekf_predict, marginalized_update

__version__ = "0.1.0"

__all__ = [
    "BeliefMDP",
    "ConstrainedBelief",
    "ConstraintModel",
    "DynamicsModel",
    "GaussianBelief",
    "Layout",
    "ObservationModel",
    "SolveReport",
    "constrained_update",
    "continuation_solve",
    "devectorize",
    "ekf_correct",
    "ekf_predict",
    "marginalized_update",
    "project_to_manifold",
    "reduce_pair",
    "solve",
    "truncate_gaussian",
    "truncated_moments_1d",
    "vectorize",
]
