"""Exception hierarchy shared by every module."""


class EPQError(Exception):
    """Base class for all errors raised by epqlab."""


class ConfigurationError(EPQError, ValueError):
    """Shapes, hyperparameters or config values are inconsistent."""


class DomainError(EPQError, ValueError):
    """A numerical operation is outside its mathematical domain (e.g. singular solve)."""


class SupportError(EPQError, ValueError):
    """A quantity was requested where the estimated behavior policy has no data."""


class DegenerateGeometryError(EPQError, ValueError):
    """Cluster construction needs at least two distinct states."""


class ParseError(EPQError, ValueError):
    """A serialized file is malformed.  ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class FormatError(EPQError, ValueError):
    """A serialized file declares an unsupported format or version."""


class OfflineAccessError(EPQError, RuntimeError):
    """Training code touched the true dynamics of a sealed Mdp."""
