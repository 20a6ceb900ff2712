"""Exception types shared across the pipeline."""


class FactragError(Exception):
    pass


class EmbeddingError(FactragError):
    pass


class FormatError(FactragError):
    """Corrupted, truncated or version-mismatched store file."""


class DimensionMismatch(FactragError, ValueError):
    pass


class EmptyCorpus(FactragError, ValueError):
    pass


class ProviderError(FactragError):
    """Network, auth or quota failure of an external provider.

    ``retryable`` tells callers whether backing off and retrying makes sense
    (429s, 5xx, timeouts) or the failure is permanent (bad key, bad URL).
    """

    def __init__(self, message: str, *, retryable: bool = False, status: int | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.status = status


class ContextOverflow(ProviderError):
    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class TooManySources(FactragError, ValueError):
    pass


class TemplateError(FactragError):
    pass


class ImageEncodeError(FactragError, ValueError):
    pass


class ParseError(FactragError):
    """The LLM response does not contain a parseable JSON object."""


class SchemaError(FactragError):
    """The JSON parsed but violates the expected output schema."""


class ModeMismatch(FactragError, ValueError):
    pass


class ThumbFetchError(FactragError):
    pass


class AlignmentError(FactragError, ValueError):
    pass


class ConfigError(FactragError):
    pass


class GenerationFailed(FactragError):
    """No usable LLM answer after the allowed retries; carries the spend so far."""

    def __init__(self, cause: Exception, input_tokens: int, output_tokens: int, calls: int):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.input_tokens = input_tokens
        self.output_tokens = output_tokens
        self.calls = calls
