# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Exception hierarchy for refcod.

Every error raised on purpose by the library derives from :class:`RefCODError`.
The three category classes (:class:`ConfigError`, :class:`DataError`,
:class:`NumericError`) decide the exit code of the command-line interface.
"""


class RefCODError(Exception):
    """Base class for all refcod errors.

    Parameters
    ----------
    message : str
        Human-readable error message.
    original_error : Exception, optional
        The underlying exception that caused this error.
    """

    def __init__(self, message: str, original_error: Exception | None = None) -> None:
        super().__init__(message)
        self.original_error = original_error


class ConfigError(RefCODError):
    """Invalid or inconsistent run configuration."""


class DataError(RefCODError):
    """Dataset, file or model input that cannot be used."""


class NumericError(RefCODError):
    """Numerical failure during optimisation."""


class MissingDirectoryError(DataError):
    """Dataset root does not follow the canonical ``Camo/`` + ``Ref/`` layout."""


class EmptyCategoryError(DataError):
    """A category has no referring images in the requested split."""


class InsufficientReferencesError(DataError):
    """More referring images were requested than a category provides."""


class WriteFailureError(DataError):
    """Output could not be written to disk."""


class EmptyMaskError(DataError):
    """A mask or foreground map has no foreground where one is required."""


class ProviderUnavailableError(DataError):
    """A foreground-map provider cannot be constructed (e.g. missing weights)."""


class CheckpointError(DataError):
    """Checkpoint file is missing or unreadable."""


class PlacementError(DataError):
    """Toy objects cannot be placed without overlap on the canvas."""


class NonFiniteLossError(NumericError):
    """Training loss became NaN or infinite."""


class BadShapeError(RefCODError, ValueError):
    """Input spatial size is incompatible with the network strides."""


class ShapeMismatchError(RefCODError, ValueError):
    """Two arrays that must share a shape do not."""


class EmptyListError(RefCODError, ValueError):
    """An operation that needs at least one element received none."""


class UndefinedMetricError(RefCODError):
    """A metric is undefined for the given input (e.g. weighted F on empty GT)."""
