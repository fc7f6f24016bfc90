"""Exception hierarchy.

Two families matter to callers. :class:`DomainError` means the inputs were
well-formed but the geometry or the task cannot be satisfied (the CLI maps it
to exit code 1). :class:`InputError` means a document, file or argument is
malformed (exit code 2).
"""

from __future__ import annotations


class GeomCoderError(Exception):
    """Base class for every error raised by this package."""


class DomainError(GeomCoderError):
    pass


class InputError(GeomCoderError):
    pass


# fitting
class DegenerateInput(DomainError):
    pass


class InsufficientConsensus(DomainError):
    pass


class AmbiguousHinge(DomainError):
    pass


class IncompleteCloud(DomainError):
    """Raised when an object's cloud covers too little of the expected surface."""


# scene
class EmptyFrame(DomainError):
    pass


class EmptyBand(DomainError):
    pass


class LabelNotFound(DomainError):
    pass


class DimensionMismatch(InputError):
    pass


# trajectory
class DegenerateRadius(DomainError):
    pass


class SweepOutOfRange(DomainError):
    pass


class Infeasible(DomainError):
    pass


class NoFeasibleCurve(DomainError):
    pass


class EndpointInCollision(DomainError):
    pass


class UnreachableHover(DomainError):
    pass


class PolicyViolation(DomainError):
    pass


class PullTooLong(DomainError):
    pass


class AmbiguousNormal(DomainError):
    pass


# planner
class SynthesisFailed(DomainError):
    pass


class MissingPrimitive(DomainError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(InputError):
    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


# sim
class Unreachable(DomainError):
    pass
