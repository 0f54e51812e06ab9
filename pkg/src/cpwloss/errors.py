"""Exception hierarchy shared by the library and the CLI."""


class CpwlossError(Exception):
    """Base class for all library errors."""


class GeometryError(CpwlossError, ValueError):
    """Invalid or degenerate cross-section parameters."""


class PreconditionError(CpwlossError, ValueError):
    """An operation was called with arguments outside its contract."""


class MeshError(CpwlossError):
    """The region map could not be meshed."""


class SolverError(CpwlossError):
    """The electrostatic system is singular or the linear solve failed."""


class DataError(CpwlossError, ValueError):
    """Malformed or non-physical measurement data."""


class ConfigError(CpwlossError, ValueError):
    """Missing or invalid run configuration."""
