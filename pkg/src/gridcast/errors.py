"""Exception types shared across the package."""


class GridcastError(Exception):
    """Base class for all gridcast errors."""


class OutOfGridError(GridcastError):
    """A position or index falls outside the forecast grid."""


class TruthOnObstacleError(GridcastError):
    """The true future cell is marked as an obstacle; no valid target exists."""


class AllMassMaskedError(GridcastError):
    """Obstacle masking removed all probability mass from a target."""


class LayoutError(GridcastError):
    """Feature vector layout does not match what the operation expects."""


class SchemaError(GridcastError):
    """A configuration or dataset file violates its schema."""
