"""Exception types shared across the package."""


class VoplanError(Exception):
    """Base class for all library errors."""


class OverlapError(VoplanError):
    """Agent discs overlap; the tangent-cone construction is undefined."""


class NonConvexError(VoplanError):
    """Polygon vertices are not convex/counterclockwise."""


class DegenerateError(VoplanError):
    """Polygon contains collinear or repeated vertices."""


class DomainError(VoplanError):
    """Argument outside the mathematical domain of the operation."""


class NonPsdError(VoplanError):
    """Covariance block has an eigenvalue below -1e-9."""


class ZeroNeighborsError(VoplanError):
    """Risk allocation requested with an empty neighbor set."""


class DimensionError(VoplanError):
    """Inconsistent problem dimensions."""


class NumericalError(VoplanError):
    """Solver failed to converge within its iteration budget."""


class AssemblyError(VoplanError):
    """Mixed-integer problem assembly received inconsistent data."""


class GuardError(VoplanError):
    """Exhaustive enumeration requested above the binary-count cap."""


class ParseError(VoplanError):
    """Scenario file could not be parsed."""


class ValidationError(VoplanError):
    """Scenario contents are structurally valid but semantically wrong."""


class IoError(VoplanError):
    """Output files could not be written."""
