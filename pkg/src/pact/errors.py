"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class PactError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class TypeNotInTemplate(PactError):
    pass


class ParseError(PactError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DanglingEdge(PactError):
    pass


class EmptyText(PactError):
    pass


class MissingVector(PactError):
    pass


class DimMismatch(PactError):
    pass


class NotEnoughNegatives(PactError):
    pass


class NonFiniteScore(PactError):
    pass


class TrainingDiverged(PactError):
    pass


class BadSubspaceCount(PactError):
    pass


class TooFewVectors(PactError):
    pass


class EmptyIndex(PactError):
    pass


class IncompatibleIndex(PactError):
    pass


class KTooLarge(PactError):
    pass


class UnknownNode(PactError):
    pass


class GraphRequired(PactError):
    pass


class RankerViolation(PactError):
    pass


class BenchShapeMismatch(PactError):
    pass


class SpecInfeasible(PactError):
    pass


class AdapterMismatchWarning(UserWarning):
    """An index was built with different adapters than the ones supplied."""
