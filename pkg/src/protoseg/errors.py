"""Exception hierarchy.

Every error raised on bad input derives from :class:`InputError`, which the
CLI maps to exit code 1.  :class:`InvariantError` marks internal failures
(exit code 2).
"""


class ProtosegError(Exception):
    """Base class for all package errors."""


class InputError(ProtosegError):
    """Invalid user-supplied data or arguments."""


class InvalidGeometryError(InputError, ValueError):
    pass


class ShapeError(InputError, ValueError):
    pass


class CorruptDataError(InputError, ValueError):
    pass


class ValidationError(InputError, ValueError):
    def __init__(self, message, scene_id=None, instance_index=None):
        where = []
        if scene_id is not None:
            where.append(f"scene {scene_id!r}")
        if instance_index is not None:
            where.append(f"instance {instance_index}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.scene_id = scene_id
        self.instance_index = instance_index


class ParseError(InputError, ValueError):
    def __init__(self, message, line=None, column=None, offset=None):
        if line is not None:
            message = f"{message} (line {line}, column {column}, offset {offset})"
        super().__init__(message)
        self.line = line
        self.column = column
        self.offset = offset


class SchemaError(InputError, ValueError):
    pass


class InvalidPolygonError(InputError, ValueError):
    pass


class ConfigurationError(InputError, ValueError):
    pass


class DomainError(InputError, ValueError):
    """A function was called outside its mathematical domain."""


class IllPosedError(InputError, ValueError):
    pass


class TrainingDivergedError(ProtosegError, RuntimeError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class InvariantError(ProtosegError, AssertionError):
    """An internal post-condition did not hold."""
