"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric problems exit 4.
"""

from __future__ import annotations


class GramGateError(Exception):
    """Base class for all package errors."""


# --- configuration / parameter errors -------------------------------------

class ConfigError(GramGateError, ValueError):
    """Bad run configuration (unknown key, malformed flag value)."""


class AlphaOutOfRange(ConfigError):
    """Risk budget alpha outside the open interval (0, 1)."""


class InvalidEta(ConfigError):
    """Dirichlet concentration eta must be positive."""


class InvalidWeightLaw(ConfigError):
    """Weight law is unknown or its parameter is invalid."""


class InvalidSpec(ConfigError):
    """Synthetic experiment specification violates its invariants."""


# --- data errors -----------------------------------------------------------

class DataError(GramGateError, ValueError):
    """Base class for problems with input data or files."""


class EmptyInput(DataError):
    """An operation that needs at least one item got none."""


class EmptyClass(DataError):
    """A class has no batches to build a prototype from."""


class NoEvaluableGroups(DataError):
    """Every group was skipped during grouped cross-validation."""


class ScoreOutOfRange(DataError):
    """A policy score fell outside [0, 1]."""


class ZeroRow(DataError):
    """L2 normalization was requested on an all-zero row."""


class IndivisibleBatching(DataError):
    """The batch count does not divide the item count."""


class ConstantLosses(DataError):
    """Anti-concentration requires at least two distinct loss values."""


class MissingColumn(DataError):
    """A required CSV column is absent."""


class InconsistentDimension(DataError):
    """Embedding rows disagree on dimension d."""


class MissingThreshold(DataError):
    """No threshold row matches the requested calibrator/alpha."""


class ParseError(DataError):
    """A CSV cell or config line could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ValueOutOfRange(ParseError):
    """A parsed value violates its documented range."""


# --- numeric errors ----------------------------------------------------------

class NumericError(GramGateError, ValueError):
    """Base class for numerical-domain failures."""


class DimensionMismatch(NumericError):
    """Operands have incompatible shapes."""


class IndexOutOfRange(NumericError, IndexError):
    """An item index is outside the batch."""


class NotSymmetric(NumericError):
    """A matrix expected to be symmetric is not, beyond tolerance."""


class RankTooLarge(NumericError):
    """Requested projector rank exceeds what the matrix supports."""


class RankMismatch(NumericError):
    """Prototypes or projectors disagree on rank."""


class TooFewEigenvalues(NumericError):
    """Eigengap rank selection needs at least two eigenvalues."""


CONFIG_ERRORS = (ConfigError,)
DATA_ERRORS = (DataError, OSError)
NUMERIC_ERRORS = (NumericError,)
