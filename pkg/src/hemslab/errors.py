"""Exception hierarchy shared across the package."""


class HemslabError(Exception):
    """Base class for all package-specific errors."""


# --- time series ingestion / preprocessing ---

class MissingColumn(HemslabError):
    pass


class NonMonotonicTimestamps(HemslabError):
    pass


class InconsistentPeriod(HemslabError):
    pass


class IncompatiblePeriod(HemslabError):
    pass


class EmptyPartition(HemslabError):
    pass


class ChannelMismatch(HemslabError):
    pass


class FrameTooShort(HemslabError):
    pass


# --- metrics ---

class LengthMismatch(HemslabError):
    pass


class EmptySeries(HemslabError):
    pass


class DegenerateRange(HemslabError):
    pass


class ZeroDenominator(HemslabError):
    pass


# --- neural core ---

class DimensionMismatch(HemslabError):
    pass


class ShapeMismatch(HemslabError):
    pass


class EmptySequence(HemslabError):
    pass


class NonScalarLoss(HemslabError):
    pass


class NonFiniteLoss(HemslabError):
    pass


class EmptyDataset(HemslabError):
    pass


class DivergedLoss(HemslabError):
    pass


# --- VARMA ---

class SingularDesign(HemslabError):
    pass


class InsufficientData(HemslabError):
    pass


class ShortHistory(HemslabError):
    pass


# --- HEMS environment / dispatch ---

class UnknownDevice(HemslabError):
    pass


class InfeasibleAction(HemslabError):
    pass


class NoFeasibleAction(HemslabError):
    pass


class StateSpaceTooLarge(HemslabError):
    pass


class LatticeMismatch(HemslabError):
    pass


# --- pipeline ---

class MissingStageOutput(HemslabError):
    pass


class ConfigError(HemslabError):
    pass
