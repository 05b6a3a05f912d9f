"""Exception hierarchy shared by all leakloc modules."""


class LeakLocError(Exception):
    """Base class for every error raised by leakloc."""


# -- network ingestion and structure -------------------------------------------------

class NetworkError(LeakLocError, ValueError):
    pass


class UnsupportedSection(NetworkError):
    pass


class DuplicateId(NetworkError):
    pass


class MissingEndpoint(NetworkError):
    pass


class UnitsUnknown(NetworkError):
    pass


class MalformedLine(NetworkError):
    def __init__(self, lineno, line, reason=""):
        self.lineno = lineno
        self.line = line
        msg = f"line {lineno}: malformed entry {line.strip()!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class SchemaViolation(NetworkError):
    pass


class DisconnectedGraph(NetworkError):
    pass


class DimensionMismatch(LeakLocError, ValueError):
    pass


class Unreachable(LeakLocError):
    pass


class UnknownNode(LeakLocError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


# -- numerical -----------------------------------------------------------------------

class NumericalError(LeakLocError):
    pass


class NoConvergence(NumericalError):
    pass


class TargetInfeasible(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class SolverDiverged(NumericalError):
    pass


class SingularKKT(NumericalError):
    pass


class DegenerateData(NumericalError, ValueError):
    pass


# -- learning / experiment -----------------------------------------------------------

class InconsistentLabels(LeakLocError, ValueError):
    pass


class TooFewAtoms(LeakLocError, ValueError):
    pass


class NotEnoughCandidates(LeakLocError, ValueError):
    pass


class MissingGroundTruth(LeakLocError):
    pass


class SensorMismatch(LeakLocError, ValueError):
    pass


class IntegrityError(LeakLocError, OSError):
    """A persisted artifact does not match the hash recorded in its manifest."""


class StageError(LeakLocError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


def with_context(exc: Exception, where: str) -> Exception:
    """Copy of ``exc`` (same type) whose message is prefixed by ``where``."""
    try:
        out = type(exc)(f"{where}: {exc}")
    except TypeError:
        out = StageError(where, exc)
    out.__cause__ = exc
    return out
