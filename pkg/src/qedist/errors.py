"""Exception hierarchy shared by all qedist modules.

The CLI maps these onto exit codes: ConfigError -> 2, numerical failures
-> 3, BoundInapplicableError -> 4.
"""


class QedistError(Exception):
    """Base class for all qedist errors."""


class ConfigError(QedistError):
    """Malformed or inconsistent model/run configuration."""


class InvalidDistributionError(QedistError):
    """A probability distribution violates its support or normalization."""


class IrreducibilityError(QedistError):
    """Generator is reducible where irreducibility is required."""


class NumericalFailureError(QedistError):
    """A linear solve did not reach the required residual tolerance."""


class ConditionBViolationError(QedistError):
    """Mean hitting times are infinite or the hitting system is singular."""


class InvalidTruncationError(QedistError):
    """Truncation member set is empty or misses the center state."""


class TruncationTooLargeError(QedistError):
    """Enumerated truncation set exceeds the configured size cap."""


class BoundInapplicableError(QedistError):
    """A theorem precondition (time range, epsilon smallness) fails."""


class DomainError(QedistError):
    """Arguments fall outside the domain of a closed-form expression."""


class DivergenceError(QedistError):
    """A truncated series shows no sign of convergence at the cap."""

    def __init__(self, message: str, partial_sums: list[float] | None = None):
        super().__init__(message)
        self.partial_sums = partial_sums or []


class NoEquilibriumError(QedistError):
    """Root finding for a deterministic equilibrium failed."""


class StabilityError(QedistError):
    """An equilibrium Jacobian has eigenvalues with nonnegative real part."""

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class ModelError(QedistError):
    """Rate evaluation produced an invalid value (negative, NaN)."""


class ExprError(QedistError):
    """Base class for rate-expression language errors."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ExprSyntaxError(ExprError):
    """Unparseable rate expression."""


class ExprEvalError(ExprError):
    """Runtime evaluation error (division by zero, log of nonpositive)."""


class NonSmoothError(ExprError):
    """Differentiation requested through min/max."""
