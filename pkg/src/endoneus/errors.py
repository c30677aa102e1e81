"""Exception types shared across the package."""

from .engine import NumericalError


class InputError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class ContractError(RuntimeError):
    """A producer did not supply what a consumer requires."""


class FitError(ValueError):
    """Not enough usable data for a fit."""


class MetricError(ValueError):
    """A metric cannot be evaluated on its inputs."""


__all__ = ["InputError", "ConfigError", "ContractError", "FitError", "MetricError", "NumericalError"]
