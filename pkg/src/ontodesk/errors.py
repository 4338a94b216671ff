"""Shared exception types. CLI exit codes map onto these."""

from __future__ import annotations


class OntodeskError(Exception):
    """Base class for all package-defined errors."""


class ParseError(OntodeskError):
    """A text input (kb file, rule file, config, pattern) failed to parse."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class ValidationError(OntodeskError):
    """Semantic validation failed; carries the individual violation messages."""

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = violations or []
        if self.violations:
            message = message + ": " + "; ".join(self.violations)
        super().__init__(message)


class UnknownEntityError(OntodeskError):
    """Lookup of an undeclared class, relation or individual."""


class TickCapError(OntodeskError):
    """The scenario did not reach quiescence within the configured tick cap."""


class FiringCapError(OntodeskError):
    """Rule evaluation exceeded the firing cap; carries the trailing firings."""

    def __init__(self, cap: int, recent: list[str]):
        self.recent = recent
        super().__init__(
            f"firing cap {cap} exceeded; last firings: " + " | ".join(recent)
        )


class FetchError(OntodeskError):
    """A fetcher could not retrieve the requested url."""
