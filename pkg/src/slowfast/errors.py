"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """A parameter set violates a structural or hypothesis-level guard."""


class PrecisionError(RuntimeError):
    """A Monte Carlo estimate is too noisy to be used downstream."""
