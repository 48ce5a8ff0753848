"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class ContractError(ValueError):
    """Inputs violate an operation's preconditions (shape, emptiness, ...)."""


class AnalysisError(RuntimeError):
    """A numerical analysis failed (singular system, divergence, ...)."""


class TraversalError(AnalysisError):
    """Skeleton traversal could not visit every pixel of a section."""


class ProblemValidationError(ValueError):
    """A problem document failed validation.

    `field` holds the JSON path of the offending entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
