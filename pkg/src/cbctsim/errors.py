"""Exception hierarchy shared across the toolkit."""


class CbctsimError(Exception):
    """Base class for all toolkit errors."""


class FormatError(CbctsimError):
    """Malformed file content (bad header field, wrong magic, ...)."""


class UnsupportedFormatError(FormatError):
    """File is recognized but uses an unsupported feature (datatype, ...)."""


class ShapeError(CbctsimError):
    """Array or grid dimensions do not match the expected shape."""


class GeometryError(CbctsimError):
    """Inconsistent acquisition geometry (e.g. sad >= sdd)."""


class OrientationError(CbctsimError):
    """Operation requires an axis-aligned volume orientation."""


class TransformError(CbctsimError):
    """Singular or otherwise unusable spatial transform."""


class ParameterError(CbctsimError):
    """Scalar parameter outside its valid range."""


class EmptyMaskError(CbctsimError):
    """A label was requested that no voxel carries."""


class ConfigError(CbctsimError):
    """Invalid pipeline or CLI configuration."""
