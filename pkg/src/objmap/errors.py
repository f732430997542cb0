"""Exception types raised across the package."""


class ObjmapError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(ObjmapError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateQuadricError(ObjmapError, ValueError):
    """A 4x4 matrix does not describe a valid ellipsoid dual quadric."""


class DegenerateConicError(ObjmapError, ValueError):
    """A dual conic does not describe a real ellipse."""


class BehindCameraError(ObjmapError, ValueError):
    """Object center has non-positive depth in the camera frame."""


class CannotInitializeError(ObjmapError, ValueError):
    """Not enough information to initialize an object from observations."""


class UnoptimizableError(ObjmapError, ValueError):
    """No usable observations remain for optimization."""


class DatasetError(ObjmapError, IOError):
    """A dataset directory or file is missing or malformed."""
