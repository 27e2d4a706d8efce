"""Error types shared across the package."""


class SafuzzError(Exception):
    """Base class for all package errors."""


class EvaluationError(SafuzzError):
    """A graph node could not be evaluated (shape mismatch, bad operand)."""

    def __init__(self, node_id: str, message: str):
        super().__init__(f"node '{node_id}': {message}")
        self.node_id = node_id


class GraphParseError(SafuzzError):
    """A program/graph definition is structurally invalid."""


class RegistryError(SafuzzError):
    """The kernel registry file is malformed."""


class CapabilityError(SafuzzError):
    """The requested kernel/oracle/rewrite is not implemented."""


class UsageError(SafuzzError):
    """The caller violated an API precondition."""


class OracleUnavailable(SafuzzError):
    """An oracle cannot judge this input (domain violated, non-finite probe).

    Callers skip the oracle or the sample point; this is a signal, not a bug.
    """


class GenerationFailure(SafuzzError):
    """Dataset generation could not produce enough samples of every class."""

    def __init__(self, kernel: str, message: str):
        super().__init__(f"kernel '{kernel}': {message}")
        self.kernel = kernel


class TrainingError(SafuzzError):
    """The training set cannot produce a usable classifier."""


class FileFormatError(SafuzzError):
    """A dataset/model/report file failed to load (version or corruption)."""
