"""Exception hierarchy shared across the package.

Plain filesystem problems use the builtin ``FileNotFoundError`` / ``OSError``;
everything salvo-specific derives from :class:`SalvoError` so callers can
catch the whole family at once.
"""

from __future__ import annotations


class SalvoError(Exception):
    """Base class for all errors raised by salvo."""


# --- raster ---------------------------------------------------------------

class UnsupportedFormatError(SalvoError):
    """The file is not a PNG or JPEG (by extension or by content)."""


class DecodeError(SalvoError):
    """The file looked like a supported format but could not be decoded."""


class MapRangeError(SalvoError):
    """Saliency map values are outside the range the output format allows."""


class InvalidInputError(SalvoError):
    """An argument violates an operation's documented preconditions."""


class MapFormatError(SalvoError):
    """A binary saliency-map file does not follow the f32raw layout."""


# --- configuration and parameters ------------------------------------------

class ParseError(SalvoError):
    """A configuration, manifest, or experiment file failed to parse."""


class SchemaError(SalvoError):
    """A parsed file is structurally valid but violates the schema."""


class NameCollisionError(SchemaError):
    """A model-specific parameter shadows a global parameter name."""


class UnknownParameterError(SalvoError):
    """A supplied parameter name is neither global nor model-specific."""


class ConstraintViolationError(SalvoError):
    """A parameter value fails its declared constraint."""

    def __init__(self, name: str, value: object, valid_values: str, context: str | None = None):
        self.name = name
        self.value = value
        self.valid_values = valid_values
        message = f"invalid value {value!r} for parameter {name!r} (valid values: {valid_values})"
        if context:
            message = f"{context}: {message}"
        super().__init__(message)


class CrossFieldViolationError(SalvoError):
    """A rule relating several resolved parameter values does not hold."""


class UnknownModelError(SalvoError):
    """No registered model has the requested name."""


# --- external model execution ----------------------------------------------

class LaunchError(SalvoError):
    """The external model process could not be started."""


class ProtocolError(SalvoError):
    """The external model broke the wire protocol."""


class ModelError(SalvoError):
    """The external model reported a failure or exited abnormally."""


class ModelTimeoutError(SalvoError):
    """The external model did not answer within its time budget."""


class ChecksumMismatchError(SalvoError):
    """Downloaded asset bytes do not hash to the declared sha256."""


class NetworkError(SalvoError):
    """An asset could not be fetched from its URL."""


# --- map post-processing and experiments -----------------------------------

class DimensionMismatchError(SalvoError):
    """Pad amounts or map dimensions are inconsistent with the target."""


class EmptyInputDirError(SalvoError):
    """The experiment input directory contains no readable images."""
