"""Exception types shared across the package."""


class RigforgeError(Exception):
    """Base class for all package errors."""


class MeshError(RigforgeError):
    """Invalid mesh data: parse failure, degenerate geometry, bad indices."""


class VoxelError(RigforgeError):
    """Voxel grid construction or query failure."""


class ShapeError(RigforgeError):
    """Tensor shape mismatch in a differentiable op."""


class NonFiniteError(RigforgeError):
    """A forward op produced NaN or Inf."""


class SkeletonError(RigforgeError):
    """Skeleton violates tree structure or is unusable for the request."""


class RigFileError(RigforgeError):
    """Malformed rig file text."""


class ConfigError(RigforgeError):
    """Configuration value out of documented range or unparseable."""
