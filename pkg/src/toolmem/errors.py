"""Exception hierarchy shared by every toolmem module."""

from __future__ import annotations


class ToolMemError(Exception):
    """Base class for all toolmem errors."""


class InvalidArgument(ToolMemError, ValueError):
    pass


class NotFound(ToolMemError, LookupError):
    pass


class DegenerateInput(ToolMemError, ValueError):
    """Input is well-typed but the quantity is undefined on it (e.g. a zero vector)."""


class ParseError(ToolMemError):
    """A persisted file could not be decoded.

    ``line`` is 1-based and points at the offending record.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ToolMemError):
    pass


class EmbeddingError(ToolMemError):
    def __init__(self, message: str, entry_id: str | None = None) -> None:
        self.entry_id = entry_id
        if entry_id is not None:
            message = f"entry {entry_id}: {message}"
        super().__init__(message)


class TemplateError(ToolMemError):
    def __init__(self, slot: str, message: str | None = None) -> None:
        self.slot = slot
        super().__init__(message or f"missing binding for placeholder {{{slot}}}")


class TransportError(ToolMemError):
    """The backend could not be reached after all retries."""


class ModelError(ToolMemError):
    """The backend answered but refused the request."""


class RefinementRejected(ToolMemError):
    """The induction model produced text with no categorized sentence."""


class UnparseableScore(ToolMemError, ValueError):
    pass


class PredictionError(ToolMemError):
    def __init__(self, message: str, task_id: str | None = None) -> None:
        self.task_id = task_id
        super().__init__(message)


class SelectionError(ToolMemError):
    pass
