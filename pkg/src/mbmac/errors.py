"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(ValueError):
    """A scenario or component configuration is unusable."""


class InvalidDeploymentError(ValueError):
    """A deployment violates its structural invariants."""


class SizeLimitError(RuntimeError):
    """An exact (exponential) computation was requested above its size cap."""


class GenerationError(RuntimeError):
    """A randomized generator exhausted its retry budget."""
