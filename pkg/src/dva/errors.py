"""Exception types shared across the package."""


class DvaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DvaError, ValueError):
    """Invalid configuration value or combination."""


class DataFormatError(DvaError, ValueError):
    """Malformed on-disk data; message names the offending file/field."""


class TrainingDiverged(DvaError, RuntimeError):
    """Non-finite loss encountered; message carries step diagnostics."""


class FeatureUnavailable(DvaError, NotImplementedError):
    """Requested functionality needs an external resource that is not bundled."""
