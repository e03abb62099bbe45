"""Exception hierarchy shared by all modules.

Every error carries a short machine-readable ``code`` so that the CLI can
record failures without parsing messages.
"""

from __future__ import annotations


class LabError(Exception):
    """Base class for all errors raised by the package."""

    code = "error"

    def __init__(self, message: str = "", **details: object) -> None:
        super().__init__(message or self.code)
        self.details = details


# numkernel
class Singular(LabError):
    code = "Singular"


class NoConvergence(LabError):
    code = "NoConvergence"


class NotHermitian(LabError):
    code = "NotHermitian"


class DimensionMismatch(LabError):
    code = "DimensionMismatch"


class NormTooLarge(LabError):
    code = "NormTooLarge"


class NonFinite(LabError):
    code = "NonFinite"


# sectorial
class CutInvalid(LabError):
    code = "CutInvalid"


class QuadratureNotConverged(LabError):
    code = "QuadratureNotConverged"


class NotTransversal(LabError):
    code = "NotTransversal"


class NotIdempotent(LabError):
    code = "NotIdempotent"


class PreconditionFailed(LabError):
    code = "PreconditionFailed"


# circleop
class DegreeTooHigh(LabError):
    code = "DegreeTooHigh"


# collar
class StepLimit(LabError):
    code = "StepLimit"


class NotPositive(LabError):
    code = "NotPositive"


# calderon
class PositivityFailed(LabError):
    code = "PositivityFailed"


class NotInvertible(LabError):
    code = "NotInvertible"


class NotWellPosed(LabError):
    code = "NotWellPosed"


# symplectic
class NotCoisotropic(LabError):
    code = "NotCoisotropic"


class NotComplement(LabError):
    code = "NotComplement"


class SignatureNonzero(LabError):
    code = "SignatureNonzero"


class NotLagrangian(LabError):
    code = "NotLagrangian"


# cobordism
class RelationViolated(LabError):
    code = "RelationViolated"


class GradingUnbalanced(LabError):
    code = "GradingUnbalanced"


# paramflow
class ShapeMismatch(LabError):
    code = "ShapeMismatch"


class NeumannDiverges(LabError):
    code = "NeumannDiverges"


class CutCrossed(LabError):
    code = "CutCrossed"


class QTooLarge(LabError):
    code = "QTooLarge"


class CNearSpectrum(LabError):
    code = "CNearSpectrum"


# extension
class PathTooFar(LabError):
    code = "PathTooFar"


class EllipticityLost(LabError):
    code = "EllipticityLost"


# cli
class SchemaError(LabError):
    code = "SchemaError"


class IncompatibleReports(LabError):
    code = "IncompatibleReports"
