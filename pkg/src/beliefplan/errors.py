from numpy.linalg import LinAlgError


class BeliefPlanError(Exception):
    """Base class for errors raised by beliefplan."""


class NonFiniteError(BeliefPlanError, FloatingPointError):
    """A model function or derivative produced NaN or inf."""


class SingularInnovationError(BeliefPlanError, LinAlgError):
    """Innovation covariance stayed singular after regularization."""


class EmptyTruncationError(BeliefPlanError):
    """A truncation left (numerically) no probability mass on the requested side."""


class VanishingGradientError(BeliefPlanError):
    """The constraint gradient is too small to define a normal direction."""


class ConfigError(BeliefPlanError, ValueError):
    """Malformed run configuration."""
