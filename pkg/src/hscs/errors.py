"""Exception hierarchy shared by all modules."""


class HSCSError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(HSCSError, ValueError):
    """Invalid user input (CLI exit code 2)."""


class NonPositiveInput(ValidationError):
    pass


class IdenticalParticles(ValidationError):
    pass


class DegenerateCharges(ValidationError):
    pass


class GeometryViolation(ValidationError):
    pass


class ContinuumState(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class MismatchedM(ValidationError):
    pass


class NullRotor(ValidationError):
    pass


class RhoOutOfRange(ValidationError):
    pass


class AboveBreakup(ValidationError):
    pass


class NoOpenChannel(HSCSError):
    pass


class ConvergenceError(HSCSError):
    """Numerical failure (CLI exit code 3)."""


class NoConvergence(ConvergenceError):
    pass


class NoBracket(ConvergenceError):
    pass


class StepTooLarge(ConvergenceError):
    pass


class AmbiguousLabel(ConvergenceError):
    pass


class GridOverflow(ConvergenceError):
    pass


class StiffnessFailure(ConvergenceError):
    pass


class LinearDependence(ConvergenceError):
    pass


class ClosedChannelContamination(ConvergenceError):
    pass


class IllConditionedMatch(ConvergenceError):
    pass


class SingularMatrix(ConvergenceError):
    pass
