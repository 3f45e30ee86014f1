"""Exception types shared across the pipeline."""


class SSCError(Exception):
    """Base class for pipeline errors."""


class ShapeError(SSCError, ValueError):
    """Array shapes or grid specs do not agree."""


class FormatError(SSCError, ValueError):
    """A file could not be parsed. Carries the path and byte offset when known."""

    def __init__(self, msg, path=None, offset=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + msg)
        self.path = path
        self.offset = offset


class AlignmentError(SSCError):
    """Normal scatter is degenerate; caller should keep the identity rotation."""


class EmptySceneError(SSCError, ValueError):
    """Scene has no surface / occupied voxels where at least one is needed."""


class CheckFailure(SSCError):
    """A numerical check (finite values, gradient tolerance) did not hold."""
