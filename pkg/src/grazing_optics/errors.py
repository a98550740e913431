"""Exception types shared across the package."""

from __future__ import annotations


class GrazingError(Exception):
    """Base class for all package errors."""


# obstacle geometry
class OutOfDomain(GrazingError):
    pass


class NonFinite(GrazingError):
    pass


class MultipleZeroLines(GrazingError):
    pass


class DegenerateLeadingForm(GrazingError):
    pass


class ChartAssumptionError(GrazingError):
    """The obstacle/direction pair does not meet the grazing-chart hypotheses."""


# hamiltonian flow
class StepFailure(GrazingError):
    pass


class NotOnBoundary(GrazingError):
    pass


class AmbiguousOrder(GrazingError):
    pass


# phase flow
class ShadowSide(GrazingError):
    pass


class OutOfChart(GrazingError):
    pass


class GrazingDegenerate(GrazingError):
    pass


class NearShadowBoundary(GrazingError):
    pass


class NotInImage(GrazingError):
    pass


class WrongOrder(GrazingError):
    pass


class WrongDimension(GrazingError):
    pass


# profiles and transport
class NonZeroMean(GrazingError):
    pass


class CoefficientSingular(GrazingError):
    pass


class LipschitzViolation(GrazingError):
    pass


class NoContraction(GrazingError):
    pass


class ResonantDivision(GrazingError):
    pass


class CFLViolation(GrazingError):
    pass


# synthesis
class StencilUnresolved(GrazingError):
    pass


class ResourceBudget(GrazingError):
    pass


# cli
class ConfigError(GrazingError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column if column is not None else 1})"
        super().__init__(message + where)


class MissingDependency(GrazingError):
    def __init__(self, stage: str, path: str):
        self.stage = stage
        self.path = path
        super().__init__(f"missing output of stage '{stage}': {path}")


class ManifestMismatch(GrazingError):
    pass
