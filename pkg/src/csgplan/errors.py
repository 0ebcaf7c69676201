"""Exception hierarchy shared across the pipeline."""


class CsgError(Exception):
    """Base class for every error raised by csgplan."""


class ParseError(CsgError):
    """A record or document could not be parsed."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class ValidationError(CsgError):
    """A parsed value violates a type invariant."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class StreamError(CsgError):
    """A frame stream violates stream-level invariants."""


class HistoryError(CsgError):
    """A graph query falls outside the retained history."""


class PddlError(ParseError):
    """Malformed or inconsistent PDDL text."""


class ProtocolError(CsgError):
    """Invalid policy-bank message or transport failure."""


class PolicyRejected(CsgError):
    """The policy bank refused an execute (e.g. unknown policy)."""
