"""Exception hierarchy shared by every module.

The CLI maps each family to a distinct exit code, so new errors should
subclass the closest family instead of ``SerError`` directly.
"""


class SerError(Exception):
    """Base class for all package errors."""


class ConfigError(SerError, ValueError):
    """Invalid configuration value or combination."""


class DataError(SerError):
    """Problem with input data: audio files, manifests, assets."""


class AudioFileNotFound(DataError, FileNotFoundError):
    pass


class MalformedWavError(DataError):
    pass


class UnsupportedCodecError(DataError):
    pass


class SampleRateMismatch(DataError, ValueError):
    pass


class EmptyInputError(DataError, ValueError):
    pass


class SilentInputError(DataError, ValueError):
    """A waveform whose RMS is zero where a reference level is required."""


class ShapeError(SerError, ValueError):
    pass


class ManifestError(DataError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class AssetError(DataError, KeyError):
    """Noise clip or impulse response id that cannot be resolved."""

    def __str__(self):
        return Exception.__str__(self)


class DivergedError(SerError, FloatingPointError):
    """Training produced a NaN loss or gradient."""
