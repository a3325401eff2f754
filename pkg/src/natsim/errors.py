"""Exception hierarchy shared by all engines."""

from __future__ import annotations


class NatSimError(Exception):
    """Base class for every error raised by natsim."""


# -- network validation -------------------------------------------------------


class ValidationError(NatSimError):
    """A network or run parameter violates an invariant.

    ``field`` names the offending entry, e.g. ``"gamma_deph[2]"``.
    """

    def __init__(self, field, message: str | None = None):
        self.field = field
        super().__init__(message or f"{type(self).__name__}: {field}")


class AsymmetricCoupling(ValidationError):
    pass


class NegativeRate(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class MissingAttachment(ValidationError):
    pass


class InvalidParameter(ValidationError):
    pass


class NetworkValidationError(ValidationError):
    """Collects every violation found while validating a network."""

    def __init__(self, violations: list[ValidationError]):
        self.violations = list(violations)
        fields = [v.field for v in self.violations]
        super().__init__(fields, "; ".join(str(v) for v in self.violations))


class DimensionMismatch(NatSimError):
    pass


class Overflow(NatSimError):
    """Requested Fock space is too large for a full density-matrix simulation."""


# -- solvers ------------------------------------------------------------------


class SolverError(NatSimError):
    pass


class StepSizeUnderflow(SolverError):
    pass


class InvariantViolation(SolverError):
    pass


class DegenerateSteadyState(SolverError):
    pass


class SingularSolve(SolverError):
    pass


class SingularSystem(SolverError):
    pass


# -- analysis -----------------------------------------------------------------


class AnalysisError(NatSimError):
    pass


class TooFewPoints(AnalysisError):
    pass


class NoTransientWindow(AnalysisError):
    pass


class InsufficientData(AnalysisError):
    pass


class ConfigParseError(NatSimError):
    pass
