"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class ParseError(SimError):
    """A structured input file could not be parsed."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ValidationError(SimError):
    """An input or constructed object violates an invariant."""


class InvalidStats(SimError):
    """Length statistics unusable for synthesis (mean <= 0 or std < 0)."""


class UnknownStage(SimError):
    """Stage index outside a workflow's 1..N range."""


class MissingTableEntry(SimError):
    """Table router has no score for a (model, difficulty) pair."""


class EmptyTrainingSet(SimError):
    """Quantile predictor was given no training values at any fallback level."""


class LengthMismatch(SimError):
    """Paired sequences differ in length (or are too short to rank)."""


class DuplicateRequest(SimError):
    """Request id dispatched twice without completing."""


class UnknownRequest(SimError):
    """Completion reported for a request id that is not in flight."""


class UnknownModel(SimError):
    """Model id not registered with the monitor or pool."""


class AssignmentConflict(SimError):
    """Attempt to re-assign a program to a different model."""


class EmptyResult(SimError):
    """Metric requested over a run with no completed programs."""


class MismatchedRuns(SimError):
    """Cross-policy comparison over runs that do not share a workload."""
