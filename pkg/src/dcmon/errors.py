"""Exception types shared across the monitoring stack."""


class DcmonError(Exception):
    """Base class for all errors raised by this package."""


# --- sample / stream validation ---

class NonFiniteValue(DcmonError):
    """Sample value is NaN or infinite."""


class UnknownMetric(DcmonError):
    """Metric name is not in the registry."""


class SequenceRegression(DcmonError):
    """Sample sequence number or timestamp went backwards for a stream."""


class UnknownGroup(DcmonError):
    """Group name is not registered."""


class UnknownEndpoint(DcmonError):
    """Endpoint is not part of the known topology."""


# --- rule language ---

class RuleSyntaxError(DcmonError):
    """Rule text does not match the grammar."""

    def __init__(self, message: str, line: int = 1, col: int = 0):
        super().__init__(f"{message} (line {line}, col {col})")
        self.message = message
        self.line = line
        self.col = col


class RuleSemanticError(DcmonError):
    """Rule is grammatical but violates a semantic constraint."""


# --- publisher agent ---

class SourceUnavailable(DcmonError):
    """Metric source produced nothing this tick."""


class OffloadCapExceeded(DcmonError):
    """Host already runs the maximum number of offloaded directives."""


class WrongHost(DcmonError):
    """Directive targets an endpoint that does not live on this host."""


class EngineUnreachable(DcmonError):
    """No live connection to the assigned engine."""


# --- engine ---

class UnknownPublisher(DcmonError):
    """Batch arrived from a publisher not assigned to this engine."""


class EmptyWindow(DcmonError):
    """Aggregate requested over a window holding no samples."""


# --- manager ---

class UnknownSubscription(DcmonError):
    """Subscription id is not registered."""


class NoCapacity(DcmonError):
    """Load cannot be spread under the watermark with the available engine pool."""


class CorruptSnapshot(DcmonError):
    """Snapshot file is missing fields or not parseable."""


class UnknownClient(DcmonError):
    """Subscriber client id has no session."""


# --- harness ---

class TraceParseError(DcmonError):
    """Trace file row could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class UnsortedTrace(DcmonError):
    """Trace rows are not in timestamp order."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class InvalidProfile(DcmonError):
    """Synthetic generator profile is inconsistent."""


class UnsatisfiableInjection(DcmonError):
    """Injected predicate cannot be made to hold within value bounds."""


class ScenarioTimeout(DcmonError):
    """Benchmark scenario exceeded its wall-clock budget."""
