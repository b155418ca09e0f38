"""Exception hierarchy shared by every module."""


class MeshAttackError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MeshAttackError):
    pass


class MeshIndexError(MeshAttackError, IndexError):
    """A face references a vertex that does not exist."""


class EmptyMesh(MeshAttackError):
    pass


class DegenerateMesh(MeshAttackError):
    pass


class InvalidSpec(MeshAttackError, ValueError):
    pass


class DimensionMismatch(MeshAttackError, ValueError):
    pass


class ConfigError(MeshAttackError, ValueError):
    pass


class NonConvergence(MeshAttackError):
    pass


class NotNormalized(MeshAttackError, ValueError):
    pass


class TopologyMismatch(MeshAttackError, ValueError):
    pass


class EmptyInput(MeshAttackError, ValueError):
    pass


class IoError(MeshAttackError, OSError):
    pass
