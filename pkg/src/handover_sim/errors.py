"""Exception hierarchy.

Everything raised on purpose derives from :class:`HandoverError`.  Input
problems derive from :class:`InputError` so the CLI can map them to exit 2.
"""

from __future__ import annotations


class HandoverError(Exception):
    """Base class for all library errors."""


# -- geometry ---------------------------------------------------------------

class DegenerateProjection(HandoverError):
    pass


class ParallelRays(HandoverError):
    pass


class BehindCamera(HandoverError):
    pass


class NonFiniteMeasurement(HandoverError):
    pass


# -- ingestion --------------------------------------------------------------

class InputError(HandoverError):
    """A scenario bundle or one of its files failed validation."""


class MissingFile(InputError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"MissingFile({self.name!r})"


class SchemaViolation(InputError):
    def __init__(self, file: str, line: int | None, message: str):
        self.file = file
        self.line = line
        self.message = message
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.file}:{self.line}" if self.line is not None else self.file
        return f"SchemaViolation at {where}: {self.message}"


class InvariantViolation(InputError):
    def __init__(self, file: str, line: int | None, message: str):
        self.file = file
        self.line = line
        self.message = message
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.file}:{self.line}" if self.line is not None else self.file
        return f"InvariantViolation at {where}: {self.message}"


class UnsupportedFormat(InputError):
    pass


class TruncatedFile(InputError):
    pass


class MalformedCalibration(InputError):
    pass


# -- perception / grasp / sim -----------------------------------------------

class NoValidFrames(HandoverError):
    pass


class EmptyIntersection(HandoverError):
    pass


class DegenerateShape(HandoverError):
    pass


class ZeroPosterior(HandoverError):
    pass


class TooShort(HandoverError):
    pass


class NotInContact(HandoverError):
    pass


class UndefinedReference(HandoverError):
    pass
