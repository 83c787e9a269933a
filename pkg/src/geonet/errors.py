"""Exception types shared across the package."""


class GeonetError(Exception):
    """Base class for all package-specific errors."""


class StructuralError(GeonetError):
    """Shape, dimension or invariant violation in inputs or parameters."""


class UnsupportedOrderError(GeonetError):
    """A derivative order was requested that the engine does not provide."""


class NonFiniteError(GeonetError):
    """A NaN or infinity appeared where finite values are required."""


class FormatError(GeonetError):
    """A file does not conform to its declared on-disk format."""


class ConfigError(GeonetError):
    """Invalid or unknown configuration keys/values."""
