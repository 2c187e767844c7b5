"""Exception hierarchy. Every error carries an optional ``stage`` for reporting."""


class TrialDesignError(Exception):
    stage = "compute"


class ValidationError(TrialDesignError, ValueError):
    stage = "validate"


class DomainError(ValidationError):
    """A derived quantity (e.g. a hazard reduction) left its valid range."""


class SingularCovarianceError(TrialDesignError, ValueError):
    pass


class NotPositiveDefiniteError(TrialDesignError, ValueError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (failing pivot {pivot})")


class NonConvergenceError(TrialDesignError, RuntimeError):
    pass


class WorkBudgetError(TrialDesignError, RuntimeError):
    pass


class InsufficientCandidatesError(TrialDesignError, RuntimeError):
    pass


class NonFiniteObjectiveError(TrialDesignError, FloatingPointError):
    def __init__(self, point, message: str | None = None):
        self.point = point
        super().__init__(message or f"objective or gradient is not finite at {list(point)}")


class InfeasibleOptimumError(TrialDesignError, RuntimeError):
    pass


class SweepError(TrialDesignError, RuntimeError):
    pass
