"""Exception types raised across the package."""


class HierDetError(Exception):
    """Base class for all package errors."""


class DegenerateRegion(HierDetError):
    pass


class NoGroundTruth(HierDetError):
    pass


class InvalidAction(HierDetError):
    pass


class ShapeMismatch(HierDetError):
    pass


class StaleCache(HierDetError):
    pass


class FormatError(HierDetError):
    """Checkpoint bytes do not decode to a network."""


class InsufficientExperiences(HierDetError):
    pass


class EmptyDataset(HierDetError):
    pass


class TreeTooLarge(HierDetError):
    pass


class InfeasiblePlacement(HierDetError):
    pass


class ParseError(HierDetError):
    """Annotation file could not be parsed; message carries file and line."""


class MissingImage(HierDetError):
    pass
