"""Exception hierarchy shared by the solvers and the experiment harness."""


class KnapsackLabError(Exception):
    """Base class; ``exit_code`` is what the command line reports."""

    exit_code = 1
    failure_class = "error"


class ValidationError(KnapsackLabError, ValueError):
    exit_code = 2
    failure_class = "validation"


class ResourceError(KnapsackLabError):
    """A table or enumeration would exceed its size budget."""

    exit_code = 3
    failure_class = "resource"


class NumericalError(KnapsackLabError):
    exit_code = 4
    failure_class = "numerical"


class CFLError(NumericalError):
    """Requested grid violates the stability bound of the explicit march."""

    def __init__(self, message, suggested_steps):
        super().__init__(message)
        self.suggested_steps = suggested_steps


class CharacteristicCrossingError(NumericalError):
    """No unique characteristic through the requested point."""


class ArtifactIOError(KnapsackLabError, OSError):
    exit_code = 5
    failure_class = "io"
