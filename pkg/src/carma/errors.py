"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class CarmaError(Exception):
    """Base class for every error raised by this package."""


class InvalidLabel(CarmaError, ValueError):
    pass


class ParseError(CarmaError, ValueError):
    pass


class NotFound(CarmaError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "not found"


class OrderViolation(CarmaError, ValueError):
    pass


class LoadError(CarmaError):
    """Persistence file could not be loaded; ``offset`` is the byte offset of the bad record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateInput(CarmaError, ValueError):
    pass


class BehindCamera(CarmaError, ValueError):
    pass


class FormatError(CarmaError):
    """Scenario or sequence file is malformed. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class IoError(CarmaError, OSError):
    """A referenced file (image, point cloud) is missing or unreadable."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path

    def __str__(self) -> str:
        return self.args[0] if self.args else "I/O error"


class GroundingError(CarmaError):
    """The reasoner's answer could not be turned into a grounded triplet.

    ``reason`` is one of ``unknown_object``, ``unknown_secondary``,
    ``malformed_response`` or ``empty_action``; ``raw`` is the verbatim
    backend response.
    """

    REASONS = ("unknown_object", "unknown_secondary", "malformed_response", "empty_action")

    def __init__(self, reason: str, raw: str, detail: str = ""):
        if reason not in self.REASONS:
            raise ValueError(f"unknown grounding error reason {reason!r}")
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.raw = raw


class BackendError(CarmaError):
    def __init__(self, status: int, body: str):
        super().__init__(f"backend returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class BackendUnavailable(CarmaError):
    pass
