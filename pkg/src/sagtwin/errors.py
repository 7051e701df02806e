"""Exception types shared across the package."""


class SagTwinError(Exception):
    """Base class for package-specific failures."""


class ConfigError(SagTwinError):
    """Invalid configuration value or malformed config structure."""


class FormatError(SagTwinError):
    """Malformed input data (unsorted timestamps, bad CSV, ...)."""


class InsufficientDataError(SagTwinError):
    """Not enough samples to carry out the requested operation."""


class IdentificationError(SagTwinError):
    """Model identification failed; carries conditioning diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingError(SagTwinError):
    """Network training diverged; carries loss diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateError(SagTwinError):
    """Operation invoked on stale or incomplete runtime state."""


class InfeasibleYlimError(SagTwinError):
    """Every y_lim candidate violated the hard CV bounds."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
