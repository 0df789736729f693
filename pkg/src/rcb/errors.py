"""Exception hierarchy shared across the package.

Three broad families drive the CLI exit codes: ``ConfigError`` (exit 2),
``ServiceError`` (exit 3) and ``DataError`` (exit 4).
"""


class RcbError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RcbError):
    """Invalid or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# Data errors: bad dataset contents, files, or numeric preconditions.
# ---------------------------------------------------------------------------


class DataError(RcbError):
    """Invalid dataset contents, dataset file, or numeric precondition."""


class EmptyClass(DataError):
    """A class has zero members where at least one is required."""


class InsufficientSource(DataError):
    """The source dataset cannot supply the requested per-class counts."""


class InvalidSpec(DataError):
    """An imbalance specification violates its own invariants."""


class SubsetTooLarge(DataError):
    """Requested balanced subset would exhaust the smallest class."""


class InvalidSize(DataError):
    """Requested subset size rounds down to less than one per class."""


class DuplicateId(DataError):
    """Two examples share an id within one dataset."""


class DimensionMismatch(DataError):
    """An embedding does not match the declared vector dimension."""


class InvalidCounts(DataError):
    """A per-class count vector contains a count below one."""


class SupportMismatch(DataError):
    """Two discrete distributions do not share the required support."""


class KTooLarge(DataError):
    """More items requested than the pool can supply."""


class MissingEmbedding(DataError):
    """An operation needs embeddings that are absent."""


class NonPositiveWeight(DataError):
    """A combined class weight is not strictly positive."""


class EmptyDemos(DataError):
    """A prediction was requested with an empty demonstration list."""


class EmptySequence(DataError):
    """A sequence-level statistic was requested on an empty sequence."""


class LengthMismatch(DataError):
    """Paired sequences have different lengths."""


class LabelOutOfRange(DataError):
    """A label is outside the dataset's label space."""


class MissingClass(DataError):
    """A class required by a diagnostic is absent from a dataset."""


class DegenerateClustering(DataError):
    """More clusters requested than points available."""


# ---------------------------------------------------------------------------
# Numeric failures.
# ---------------------------------------------------------------------------


class SingularGram(RcbError):
    """Gram matrix stayed non-positive-definite after jitter escalation."""


# ---------------------------------------------------------------------------
# Upstream service errors.
# ---------------------------------------------------------------------------


class ServiceError(RcbError):
    """A remote provider failed or returned an unusable response."""


class ProviderUnavailable(ServiceError):
    """Embedding provider unreachable after retry exhaustion."""


class ClientError(ServiceError):
    """Scoring/generation endpoint failed after bounded retries."""


class MissingLogprobs(ServiceError):
    """Scoring endpoint response omitted per-token log probabilities."""


class PredictorFailure(ServiceError):
    """A prediction failed; carries the id of the failing query."""

    def __init__(self, query_id: str, cause: Exception):
        super().__init__(f"prediction failed for query {query_id!r}: {cause}")
        self.query_id = query_id
        self.cause = cause
