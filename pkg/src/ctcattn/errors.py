"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    pass


class InfeasibleAlignment(ValueError):
    """Label sequence cannot be aligned to the given number of frames."""


class InconsistencyError(RuntimeError):
    """A function that must be deterministic returned different values."""


class FormatError(ValueError):
    """Malformed dataset or checkpoint file.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeMismatch(FormatError):
    def __init__(self, name: str, expected, found, offset: int | None = None):
        super().__init__(
            f"tensor {name!r}: expected shape {tuple(expected)}, found {tuple(found)}",
            offset,
        )
        self.name = name


class NonFiniteLoss(RuntimeError):
    pass
