"""Exception types shared across the toolkit."""


class AerotextError(Exception):
    """Base class for every error this package raises on purpose."""


# --- corpus ---------------------------------------------------------------

class MissingColumn(AerotextError):
    pass


class MalformedCsv(AerotextError):
    pass


class InvalidMapping(AerotextError):
    pass


class UnmappedOperator(AerotextError):
    pass


class TooFewRecords(AerotextError):
    pass


# --- textprep -------------------------------------------------------------

class EmptyCorpus(AerotextError):
    pass


# --- autodiff -------------------------------------------------------------

class ShapeMismatch(AerotextError):
    pass


class NotScalarLoss(AerotextError):
    pass


class DisconnectedLoss(AerotextError):
    pass


# --- models ---------------------------------------------------------------

class IdOutOfRange(AerotextError):
    pass


class KernelTooLarge(AerotextError):
    pass


# --- training -------------------------------------------------------------

class EmptySplit(AerotextError):
    pass


class NonfiniteLoss(AerotextError):
    pass


class VersionUnsupported(AerotextError):
    pass


class CorruptCheckpoint(AerotextError):
    pass


# --- evaluation -----------------------------------------------------------

class LengthMismatch(AerotextError):
    pass


class EmptyInput(AerotextError):
    pass


class EmptyMatrix(AerotextError):
    pass


class IoFailure(AerotextError):
    pass
