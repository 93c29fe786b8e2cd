"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid configuration value or file."""


class RoutingError(RuntimeError):
    """Routing cannot connect every node to the gateway."""


class TrainingDivergedError(RuntimeError):
    """A non-finite value appeared during training."""
