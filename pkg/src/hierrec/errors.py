"""Exception hierarchy shared across the package.

Every error maps to a CLI exit code: contract/config violations exit 2,
I/O failures exit 3 (plain OSError), numeric failures during training
exit 4.
"""


class HierRecError(Exception):
    """Base class for all package errors."""


class ConfigError(HierRecError):
    """Invalid configuration value or inconsistent dimensions."""


class SchemaError(HierRecError):
    """Dataset schema violated (missing column, bad cardinality, ...)."""


class ParseError(HierRecError):
    """Malformed data file content (bad label, index overflow, ...)."""


class GenerationError(HierRecError):
    """Invalid synthetic-data request."""


class ShapeError(HierRecError):
    """Tensor dimension mismatch."""


class StateError(HierRecError):
    """Operation called out of order (e.g. backward before forward)."""


class LookupError_(HierRecError):
    """Embedding index out of table bounds."""


class RoutingError(HierRecError):
    """Sample routed to a tower that does not exist."""


class CheckpointError(HierRecError):
    """Unreadable, truncated or version-incompatible checkpoint."""


class MetricError(HierRecError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class NumericError(HierRecError):
    """Non-finite loss or gradient encountered during optimization."""
