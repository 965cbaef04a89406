"""Exception types. The CLI maps each to a documented exit code."""


class ProbitPanelError(Exception):
    """Base class for package errors."""


class DomainError(ProbitPanelError, ValueError):
    """An argument lies outside the domain of a statistical primitive."""


class ConfigError(ProbitPanelError, ValueError):
    """Invalid run configuration or schema mapping (exit code 2)."""


class DataError(ProbitPanelError, ValueError):
    """Malformed or unusable input data (exit code 3)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SamplerError(ProbitPanelError, RuntimeError):
    """A sampler failed mid-chain (exit code 4)."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
