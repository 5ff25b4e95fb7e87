"""
Error types shared by the persistence model, the level hashing store,
the explorer and the CLI.
"""

from typing import Optional


class PMCheckError(Exception):
    """Base class for every error raised by the toolkit"""


class TraceParseError(PMCheckError, ValueError):
    """A trace record could not be parsed"""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class TraceValidationError(PMCheckError, ValueError):
    """A trace parsed but breaks a structural rule (regions, store geometry)"""

    def __init__(self, reason: str, line_no: Optional[int] = None):
        self.line_no = line_no
        message = f"line {line_no}: {reason}" if line_no is not None else reason
        super().__init__(message)


class ContractViolation(PMCheckError, RuntimeError):
    """A caller broke an operation's precondition"""


class CrashEnumerationLimit(PMCheckError):
    """Too many flush-pending lines at a crash point to enumerate every subset"""

    def __init__(self, pending: int, cap: int):
        self.pending = pending
        self.cap = cap
        super().__init__(
            f"{pending} flush-pending lines at crash point exceed the cap of {cap} "
            f"({2 ** pending} images)"
        )


class DuplicateKeyError(PMCheckError):
    """Insert of a key that is already stored"""


class InvalidKeyError(PMCheckError, ValueError):
    """Key or value outside the 64-bit slot encoding (key 0 is reserved)"""


class TableFullError(PMCheckError):
    """No free slot for a key even after resizing"""


class GraphSpecError(PMCheckError, ValueError):
    """Malformed exploration graph spec"""


class ConfigError(PMCheckError, ValueError):
    """Invalid configuration value"""


class CorruptLayoutError(PMCheckError):
    """A memory image does not decode as a level hashing table"""
