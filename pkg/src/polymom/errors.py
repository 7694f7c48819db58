"""Exception hierarchy shared by all stages."""


class PolymomError(Exception):
    """Base class for every error raised by this package."""


class TermCapError(PolymomError):
    """Exact polynomial grew past the configured term budget."""


class NumericalError(PolymomError):
    """A numerical stage failed (root finding, decomposition, solve...)."""


class RootFindingError(NumericalError):
    pass


class DegenerateCoefficientError(NumericalError):
    """A normalizing coefficient vanished for the requested activation degree."""


class DecompositionError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class SynthesisError(PolymomError):
    """Rejection sampling could not produce a robust target."""


class StageError(NumericalError):
    """Wraps a failure with the pipeline stage and index that produced it."""

    def __init__(self, stage: str, index, cause: Exception):
        self.stage = stage
        self.index = index
        self.cause = cause
        super().__init__(f"[{stage} {index}] {type(cause).__name__}: {cause}")
