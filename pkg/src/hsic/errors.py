"""Exception types raised across the package.

Data-side problems derive from :class:`DataError`, configuration problems from
:class:`ConfigError`; the command-line runner maps each family to an exit code.
"""


class HsicError(Exception):
    """Base class for every error raised by :mod:`hsic`."""


class DataError(HsicError, ValueError):
    pass


class ConfigError(HsicError, ValueError):
    pass


# -- ingestion -------------------------------------------------------------
class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedHeader(DataError):
    pass


class SizeMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class EmptyClass(DataError):
    pass


class BadRatios(ConfigError):
    pass


# -- spectral preparation --------------------------------------------------
class KTooLarge(ConfigError):
    pass


class DimensionMismatch(DataError):
    pass


class CoordinateOutOfRange(DataError, IndexError):
    pass


class EvenPatch(ConfigError):
    pass


class EmptySubset(DataError):
    pass


# -- tensors ---------------------------------------------------------------
class ShapeMismatch(HsicError, ValueError):
    pass


class KernelTooLarge(ShapeMismatch):
    pass


class CountMismatch(ShapeMismatch):
    pass


class NotScalar(HsicError, ValueError):
    pass


class AlreadyBackpropagated(HsicError, RuntimeError):
    pass


# -- model -----------------------------------------------------------------
class NegativeExtent(ConfigError):
    pass


class PatchTooSmall(NegativeExtent):
    pass


class DivergedLoss(HsicError, FloatingPointError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


# -- metrics ---------------------------------------------------------------
class LengthMismatch(HsicError, ValueError):
    pass


class EmptyMatrix(HsicError, ValueError):
    pass


class DegenerateMarginals(HsicError, ZeroDivisionError):
    pass


class ManifestMismatch(HsicError):
    pass
