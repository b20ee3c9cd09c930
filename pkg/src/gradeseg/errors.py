"""Exception types raised across the package."""


class GradesegError(Exception):
    """Base class; the CLI turns these into one-line diagnostics."""


class ConfigurationError(GradesegError, ValueError):
    pass


class FormatError(GradesegError, ValueError):
    pass


class ShapeError(GradesegError, ValueError):
    pass


class PairingError(GradesegError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its message by default
        return str(self.args[0]) if self.args else ""


class ManifestError(GradesegError, FileNotFoundError):
    pass
