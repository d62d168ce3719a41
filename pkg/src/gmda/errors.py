"""Exception hierarchy and warning categories used across the package."""

from __future__ import annotations


class GmdaError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(GmdaError, ValueError):
    """A vector or matrix does not match the dimension it is evaluated against."""


class NotFactorized(GmdaError, RuntimeError):
    """A Gaussian component is missing its cached Cholesky factorization."""


class FactorizationError(GmdaError, RuntimeError):
    """Cholesky failed even after the bounded ridge escalation."""


class EmptyInput(GmdaError, ValueError):
    """An operation received an empty collection where values are required."""


class NonSquare(GmdaError, ValueError):
    """A square matrix was expected."""


class TooFewPoints(GmdaError, ValueError):
    """Fewer points than clusters requested."""


class ClassTooSmall(GmdaError, ValueError):
    """A class has fewer observed samples than mixture components."""

    def __init__(self, class_index: int, count: int, needed: int):
        self.class_index = class_index
        super().__init__(
            f"class {class_index} has {count} observed samples, needs at least {needed}"
        )


class ClassMissing(GmdaError, ValueError):
    """A class index in the expected label range never occurs in the data."""

    def __init__(self, class_index: int):
        self.class_index = class_index
        super().__init__(f"class {class_index} never occurs among the observed labels")


class InvalidParams(GmdaError, ValueError):
    """A parameter container violates one of its invariants."""


class NumericalCollapse(GmdaError, FloatingPointError):
    """Every class scored log-probability -inf for some sample.

    Signals that a hard zero in the flipping matrix or the class priors blocks
    every explanation of the sample.
    """

    def __init__(self, sample_index: int):
        self.sample_index = sample_index
        super().__init__(
            f"sample {sample_index}: all classes have zero posterior probability"
        )


class MonotonicityViolation(GmdaError, RuntimeError):
    """The log-likelihood trace decreased beyond slack (implementation bug)."""


class MissingTrueLabels(GmdaError, ValueError):
    """An operation needs true labels that the dataset does not carry."""


class DegenerateSplit(GmdaError, ValueError):
    """A stratified split would leave some class empty on one side."""


class TooFewSamples(GmdaError, ValueError):
    """Some class has fewer samples than the requested number of folds."""


class ParseError(GmdaError, ValueError):
    """A delimited text file failed to parse; carries a 1-based position."""

    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{message} ({where})")


class RaggedRows(ParseError):
    """Rows of a delimited file disagree on the number of fields."""


class LengthMismatch(GmdaError, ValueError):
    """Two label vectors being compared have different lengths."""


class ShapeMismatch(GmdaError, ValueError):
    """A recovered parameter and its ground truth have incompatible shapes."""


class InvalidSpec(GmdaError, ValueError):
    """A synthetic-data or noise specification violates its invariants."""


class SpecError(GmdaError, ValueError):
    """An experiment specification is unsatisfiable or inconsistent."""


class DeadComponentWarning(RuntimeWarning):
    """A mixture component lost essentially all responsibility mass and was revived."""
