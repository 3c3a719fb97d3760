"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class HopGraphError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(HopGraphError):
    pass


class ValidationError(HopGraphError):
    pass


class CorpusLoadError(HopGraphError):
    pass


class CorpusParseError(HopGraphError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class IndexingError(HopGraphError):
    pass


class IndexFormatError(HopGraphError):
    """Raised when a persisted index has the wrong magic header or version."""


class NotFoundError(HopGraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class ExtractionError(HopGraphError):
    def __init__(self, message: str, raw_response: str = "") -> None:
        super().__init__(message)
        self.raw_response = raw_response


class TemplateError(ConfigurationError):
    pass


class ProviderError(HopGraphError):
    """A model call failed for good (retries exhausted or non-retryable)."""

    def __init__(self, message: str, role: str = "", prompt_hash: str = "") -> None:
        super().__init__(message)
        self.role = role
        self.prompt_hash = prompt_hash


class TransientProviderError(ProviderError):
    """A model call failed in a way worth retrying (timeouts, 429, 5xx)."""
