"""Exception types raised across the package."""


class MeshgradError(Exception):
    pass


class MeshError(MeshgradError, ValueError):
    pass


class IndexOutOfRange(MeshError):
    pass


class AttributeLengthMismatch(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


class LevelOutOfRange(MeshError):
    pass


class IsolatedVertex(MeshError):
    pass


class DegenerateCamera(MeshgradError, ValueError):
    pass


class DegenerateTriangle(MeshgradError, ValueError):
    pass


class EmptyFaceList(MeshgradError, ValueError):
    pass


class ZeroResolution(MeshgradError, ValueError):
    pass


class ShapeMismatch(MeshgradError, ValueError):
    pass


class TapeMismatch(MeshgradError, ValueError):
    """Backward pass called with a tape that does not belong to the inputs."""


class WrongSpecVariant(MeshgradError, TypeError):
    pass


class EmptyUnion(MeshgradError, ValueError):
    pass


class NonFiniteComponent(MeshgradError, ValueError):
    pass


class NonFiniteGradient(MeshgradError, ValueError):
    pass


class NonFiniteLoss(MeshgradError, RuntimeError):
    def __init__(self, message, iteration=None, snapshot=None):
        super().__init__(message)
        self.iteration = iteration
        self.snapshot = snapshot


class ParseError(MeshgradError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column


class DecodeError(MeshgradError, ValueError):
    pass


class UnsupportedColorType(MeshgradError, ValueError):
    pass


class SchemaError(MeshgradError, ValueError):
    """Config validation failure; ``path`` locates the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
