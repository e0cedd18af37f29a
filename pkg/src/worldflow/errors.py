"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's preconditions."""


class EmptyInputError(ValueError):
    """An operation received an empty input it cannot act on."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but degenerate for the requested operation."""


class TrainingDivergenceError(RuntimeError):
    """Training produced non-finite gradients or parameters."""


class DependencyError(RuntimeError):
    """A pipeline stage is missing an upstream artifact."""


class StaleArtifactError(RuntimeError):
    """An on-disk artifact was produced under a different configuration."""


class UnavailableModelError(RuntimeError):
    """A requested model component has not been trained or loaded."""


class PersistenceError(RuntimeError):
    """Reading or writing an artifact failed."""
