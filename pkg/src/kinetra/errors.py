"""Exception types shared by the package; each maps to a CLI exit code."""


class KinetraError(Exception):
    exit_code = 1


class ConfigError(KinetraError, ValueError):
    """Malformed or invalid run configuration."""

    exit_code = 2


class ModelError(KinetraError, ValueError):
    """Model parameters violate a structural assumption."""

    exit_code = 2


class OutsideHalfPlane(KinetraError, ValueError):
    """Spectral parameter outside the half-plane where the resolvent formula holds."""

    exit_code = 3


class NumericalFailure(KinetraError, RuntimeError):
    """Divergence, singular system or other numerical breakdown."""

    exit_code = 3

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info
