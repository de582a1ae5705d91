"""Exception hierarchy."""


class StrataflowError(Exception):
    """Base class for all library errors."""


class MalformedCell(StrataflowError):
    def __init__(self, cell_id, reason):
        super().__init__(f"cell {cell_id}: {reason}")
        self.cell_id = cell_id
        self.reason = reason


class OutOfBox(StrataflowError):
    pass


class NotInClosure(StrataflowError):
    pass


class QPFailure(StrataflowError):
    pass


class NoWitness(StrataflowError):
    pass


class EmptySet(StrataflowError):
    pass


class DimensionTooLarge(StrataflowError):
    pass


class PolicyViolation(StrataflowError):
    pass


class EscapeBeforeEnd(StrataflowError):
    def __init__(self, time, margin):
        super().__init__(f"reconstructed arc left its stratum at t={time:.6g} "
                         f"(boundary margin {margin:.3g})")
        self.time = time
        self.margin = margin


class FilippovBoundViolated(StrataflowError):
    pass


class DescentFailed(StrataflowError):
    pass


class BadIntervals(StrataflowError):
    pass


class NotOnBoundary(StrataflowError):
    pass


class AimFailure(StrataflowError):
    pass


class ParseError(StrataflowError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class ValidationFailed(StrataflowError):
    def __init__(self, report):
        axioms = ", ".join(report.failed_axioms()) or "unknown"
        super().__init__(f"scenario failed validation: {axioms}")
        self.report = report


class ScenarioIOError(StrataflowError):
    pass
