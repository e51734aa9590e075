"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user-facing configuration (sizes, ranges, unknown keys)."""


class ContractError(ValueError):
    """A call violated an internal precondition (shape/sign mismatches)."""


class NumericalError(RuntimeError):
    """A solver failed to converge or hit a singular system.

    Carries optional diagnostics in ``history`` (e.g. residuals per iteration).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
