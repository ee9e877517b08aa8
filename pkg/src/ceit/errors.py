"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class CeitError(Exception):
    """Base class for all pipeline errors."""


class GeometryError(CeitError, ValueError):
    """A domain/grid/ring constraint is violated; message names the failed invariant."""


class ConfigError(CeitError, ValueError):
    """Malformed or inconsistent run configuration."""


class DataIntegrityError(CeitError, ValueError):
    """Measured or derived data violates a structural assumption (e.g. h0 <= 0)."""


class MeshGeometryError(CeitError, RuntimeError):
    """A grid node falls outside the triangulation; mesh and grid do not match."""


class SolverError(CeitError, RuntimeError):
    """An iterative linear solve failed to reach its residual target."""


class LineSearchError(CeitError, RuntimeError):
    """Backtracking found no decrease at the minimal step; carries diagnostics."""
