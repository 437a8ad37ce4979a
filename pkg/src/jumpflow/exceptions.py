"""Exception types shared across the solver modules."""


class JumpflowError(Exception):
    """Base class for all library errors."""


class IntegrationError(JumpflowError):
    """An integrand evaluated to a non-finite value."""


class SimulationError(JumpflowError):
    """Forward path simulation produced a non-finite state."""


class RegressionError(JumpflowError):
    """Least-squares regression received or produced invalid data."""


class EvaluationError(JumpflowError):
    """A value function or operator evaluation failed."""


class ConfigurationError(JumpflowError):
    """Invalid experiment configuration or incompatible problem data."""
