"""Exception types shared across the pipeline.

Stage failures that should not kill a whole case (decode errors, transport
errors, refusals) are caught by the pipeline coordinator and recorded as
human-review reasons; everything else propagates.
"""


class PipelineError(Exception):
    """Base class for all pipeline-specific errors."""


# -- case ingestion ----------------------------------------------------------

class EmptyCase(PipelineError):
    """A case directory contains no media assets."""


class UnsupportedMedia(PipelineError):
    """A media file has an extension outside {mp4, jpg, jpeg, png}."""


class EmptyMetadata(PipelineError):
    """Title and description are both empty: evidence retrieval cannot run."""


# -- media decoding ----------------------------------------------------------

class DecodeFailure(PipelineError):
    """A video or image could not be decoded."""


class EncodeFailure(PipelineError):
    """An image could not be re-encoded for LLM submission."""


# -- clustering --------------------------------------------------------------

class DimensionMismatch(PipelineError):
    """Frame buffers or embeddings with inconsistent shapes were mixed."""


class KTooLarge(PipelineError):
    """k exceeds the number of points."""


class SingleCluster(PipelineError):
    """Silhouette is undefined for fewer than two clusters."""


# -- evidence retrieval ------------------------------------------------------

class NoKeywords(PipelineError):
    """Title and description reduce to nothing after stopword removal."""


class QuotaExceeded(PipelineError):
    """The search backend rejected the request for quota reasons."""


class TransportError(PipelineError):
    """A network or IPC transport failed (retryable)."""


class AuthError(PipelineError):
    """A backend rejected our credentials (not retryable)."""


class PersistFailure(PipelineError):
    """Writing a stage output to disk failed; fatal for the case."""


# -- verification engine -----------------------------------------------------

class MissingBinding(PipelineError):
    """A prompt template placeholder was left unbound."""


class NoJsonFound(PipelineError):
    """No balanced JSON object could be located in an LLM response."""


class SchemaViolation(PipelineError):
    """A parsed LLM response is missing required keys."""

    def __init__(self, missing_keys, message=None):
        self.missing_keys = list(missing_keys)
        super().__init__(message or f"missing required keys: {self.missing_keys}")


class ExhaustedRetries(PipelineError):
    """All retry attempts against a backend failed."""


class LlmRefusal(PipelineError):
    """The model refused to answer; the case needs human review."""


class BadDate(PipelineError):
    """Date text violates the dd/mm/yyyy pattern or the calendar."""


class BadCoordinates(PipelineError):
    """Coordinate text could not be parsed or is out of range."""


# -- sidecar / offline guard -------------------------------------------------

class SidecarUnavailable(PipelineError):
    """The model sidecar is selected but cannot be reached."""


class HandshakeTimeout(SidecarUnavailable):
    """The sidecar did not answer the hello frame within the deadline."""


class OfflineViolation(PipelineError):
    """A real network transport was invoked while running offline."""
