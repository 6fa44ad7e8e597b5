"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates a documented constraint."""


class DomainError(ValueError):
    """An evaluation point lies outside the function's domain."""


class NumericError(FloatingPointError):
    """A computation produced or received non-finite values."""


class ProtocolError(RuntimeError):
    """An operation was called out of its required sequence."""


class TrainingDiverged(RuntimeError):
    """Training cost became non-finite or exceeded the divergence limit.

    Carries a diagnostic snapshot of the state at the failing epoch plus
    whatever round logs were produced before the abort.
    """

    def __init__(self, message, snapshot=None, partial_logs=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
        self.partial_logs = partial_logs or []
