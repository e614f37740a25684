"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ValidationError(ValueError):
    pass


class LoadError(OSError):
    pass


class SolverError(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    """Raised when the loss becomes non-finite; carries a diagnostics dict."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MissingArtifact(FileNotFoundError):
    pass


class ConfigError(ValueError):
    pass
