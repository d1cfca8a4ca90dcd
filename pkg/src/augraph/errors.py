"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class AugraphError(Exception):
    """Base class for all package errors."""

    exit_code = 3

    def __init__(self, message: str, code: str = "error", **details: Any):
        super().__init__(message)
        self.message = message
        self.code = code
        self.details = details

    def to_json(self) -> dict:
        return {"error": self.code, "message": self.message, "details": _plain(self.details)}


class ValidationError(AugraphError, ValueError):
    """Bad input: schema, CSV, task file or configuration."""

    exit_code = 2


class SchemaSyntaxError(ValidationError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})", "syntax", line=line, column=column)
        self.line = line
        self.column = column


class NumericError(AugraphError):
    """Training or evaluation produced a non-finite or degenerate result."""


class ScoringError(AugraphError):
    """A candidate attribute failed to score; carries the attribute."""

    def __init__(self, attribute, cause: Exception):
        super().__init__(f"scoring {attribute} failed: {cause}", "scoring", attribute=str(attribute))
        self.attribute = attribute
        self.cause = cause
        if isinstance(cause, ValidationError):
            self.exit_code = 2


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)
