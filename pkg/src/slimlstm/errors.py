"""Exception hierarchy shared across the package.

Every error the CLI can surface maps to one class here; the CLI prints the
class name as a machine-parsable category.
"""


class SlimLstmError(Exception):
    """Base class for all package errors."""


class DimensionError(SlimLstmError):
    """Operand shapes are incompatible; message names both shapes."""


class ContractViolationError(SlimLstmError):
    """A documented precondition was violated by the caller."""


class FormatError(SlimLstmError):
    """A file does not follow its documented layout (bad magic, bad version,
    malformed line)."""


class TruncatedDataError(FormatError):
    """A file ended before its declared payload."""


class ConsistencyError(FormatError):
    """Two files that must agree (e.g. image/label counts) do not."""


class OutOfVocabularyError(SlimLstmError):
    """A token id exceeds the embedding table size."""


class CorruptionError(SlimLstmError):
    """Checksum failure or unreadable binary payload."""


class DivergenceError(SlimLstmError):
    """Training produced a non-finite loss."""


class DegenerateDataError(SlimLstmError):
    """Input data has no variance to normalize."""
