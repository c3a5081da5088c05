"""Exception hierarchy shared across the package.

Every error carries enough context (offsets, line numbers, ids) to locate
the fault without re-running the failing call.
"""


class MolCnpError(Exception):
    """Base class for all package errors."""


# --- chemistry -------------------------------------------------------------


class SmilesError(MolCnpError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.message = message
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnclosedRingBond(SmilesError):
    pass


class UnknownAtomToken(SmilesError):
    pass


class InvalidBond(SmilesError):
    """Self-bond or a second bond between the same atom pair."""


class LengthMismatch(MolCnpError, ValueError):
    pass


# --- numerics --------------------------------------------------------------


class DimensionMismatch(MolCnpError, ValueError):
    pass


class ShapeMismatch(MolCnpError, ValueError):
    pass


class NonPositiveVariance(MolCnpError, ValueError):
    pass


class NonFiniteLoss(MolCnpError, FloatingPointError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class EmptyContext(MolCnpError, ValueError):
    pass


class InsufficientObservations(MolCnpError, ValueError):
    pass


# --- baselines -------------------------------------------------------------


class EmptyTrainingSet(MolCnpError, ValueError):
    pass


class KTooLarge(MolCnpError, ValueError):
    pass


class UnknownFunction(MolCnpError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown function"


# --- data ------------------------------------------------------------------


class DataError(MolCnpError):
    """Base for problems with input files and tables."""


class MalformedHeader(DataError, ValueError):
    pass


class RaggedRow(DataError, ValueError):
    def __init__(self, line, expected, got):
        super().__init__(f"line {line}: expected {expected} fields, got {got}")
        self.line = line


class BadNumeric(DataError, ValueError):
    def __init__(self, line, column, text):
        super().__init__(f"line {line}, column {column!r}: cannot parse {text!r} as a number")
        self.line = line
        self.column = column


class DuplicateMoleculeId(DataError, ValueError):
    pass


class InsufficientPool(DataError, ValueError):
    pass


class UnknownFunctionName(DataError, ValueError):
    pass


class InvalidSplit(DataError, ValueError):
    pass


class QedOutOfRange(DataError, ValueError):
    pass


class MissingQed(DataError, ValueError):
    pass


class CacheError(DataError, ValueError):
    pass


# --- experiments / cli -----------------------------------------------------


class ConstantTruth(MolCnpError, ValueError):
    pass


class PoolExhausted(MolCnpError, ValueError):
    pass


class MissingCheckpoint(MolCnpError, FileNotFoundError):
    pass


class ConfigError(MolCnpError, ValueError):
    pass
