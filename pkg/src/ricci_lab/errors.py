"""Exception hierarchy shared by all modules."""


class RicciLabError(Exception):
    pass


class ParameterError(RicciLabError, ValueError):
    """Invalid or inconsistent input parameters."""


class InvariantError(RicciLabError, ValueError):
    """A data type invariant does not hold (e.g. non-SPD matrix, non-positive phi)."""


class ConstructionError(RicciLabError):
    """A profile builder could not produce a smooth admissible profile."""


class SingularProfileError(RicciLabError):
    """psi vanishes (numerically) at an interior node."""


class CFLViolation(RicciLabError):
    """Requested time step exceeds the parabolic stability bound."""


class BoundaryDegenerateError(RicciLabError):
    """A level-set boundary has zero area."""


class DomainError(RicciLabError, ValueError):
    """Argument outside the domain where a closed form is defined."""


class NumericFailure(RicciLabError):
    """A time step produced non-finite values or a non-positive interior psi."""
