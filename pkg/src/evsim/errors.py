"""Exception hierarchy.

Every exception carries the process exit code the CLI maps it to:
1 validation failure, 2 usage error, 3 I/O error, 4 solver failure.
"""


class EvsimError(Exception):
    exit_code = 1


# --- usage / bad arguments -------------------------------------------------

class UsageError(EvsimError, ValueError):
    exit_code = 2


class GeometryMismatch(UsageError):
    """Streams with different sensor sizes cannot be merged."""


class EmptySequence(UsageError):
    """Fewer than two frames were supplied to the simulator."""


class DegenerateView(UsageError):
    """The rendered plane is seen from behind or edge-on."""


class TooFewPoses(UsageError):
    pass


# --- data validation -------------------------------------------------------

class ValidationError(EvsimError):
    exit_code = 1


class OrderingError(ValidationError):
    """An event stream violates its ordering invariants."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonMonotonicTimestamps(ValidationError, ValueError):
    pass


class NonPositiveDepth(ValidationError, ValueError):
    def __init__(self, message, pose=None, corner=None):
        super().__init__(message)
        self.pose = pose
        self.corner = corner


class DatasetFormatError(ValidationError):
    pass


class MalformedLine(DatasetFormatError):
    def __init__(self, lineno, content, reason=""):
        msg = f"line {lineno}: malformed record {content!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.lineno = lineno
        self.content = content


class WrongFieldCount(MalformedLine):
    pass


class NonMonotonicTimestamp(DatasetFormatError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyBundle(DatasetFormatError):
    pass


class NoEvents(DatasetFormatError):
    pass


# --- I/O ------------------------------------------------------------------

class SinkFailure(EvsimError, OSError):
    exit_code = 3


# --- numerical solvers -----------------------------------------------------

class SolverError(EvsimError):
    exit_code = 4


class NoConvergence(SolverError):
    pass


class DegenerateMotion(SolverError):
    pass


class DivergedOrStalled(SolverError):
    pass
