"""Exception types shared across the package."""


class HyperseriesError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HyperseriesError):
    """Tensor extents do not line up for the requested operation."""


class NumericError(HyperseriesError):
    """A value became NaN/Inf, or a numeric precondition was violated."""


class DegenerateMaskError(HyperseriesError):
    """A softmax row was masked out entirely."""


class ConfigError(HyperseriesError):
    """A configuration value is missing, malformed, or inconsistent."""


class DataError(HyperseriesError):
    """A dataset could not be loaded, split, or windowed as requested."""


class DeterminismError(HyperseriesError):
    """Two evaluations of a supposedly deterministic function disagreed."""


class EmptyHypergraphError(HyperseriesError):
    """Hypergraph assembly produced zero hyperedges."""


class MissingArtifactError(HyperseriesError):
    """A required on-disk artifact (e.g. a checkpoint) was not provided."""
