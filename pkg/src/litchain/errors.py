"""Exception types shared across the package."""


class LitchainError(Exception):
    """Base class for all package-specific errors."""


class EmptyReview(LitchainError):
    """Source selection was given an empty list of review papers."""


class UnknownPaper(LitchainError):
    """A paper id does not resolve in the provider's corpus."""


class ProviderUnavailable(LitchainError):
    """The citation provider could not be reached within the retry budget."""


class InvalidChunkSize(LitchainError):
    """Chunk size must be a positive integer."""


class BackendUnavailable(LitchainError):
    """The scoring/generation backend could not be reached or answered garbage."""


class ParseFailure(LitchainError):
    """A model completion could not be parsed even after one re-prompt.

    The raw completion is kept on the exception for auditing.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class EmptyVoteSet(LitchainError):
    """Majority vote over zero judgments."""


class MixedPairError(LitchainError):
    """Majority vote over judgments that do not all target the same pair."""


class InsufficientRaters(LitchainError):
    """Agreement statistics need at least two raters."""


class IneligibleScore(LitchainError):
    """Relevance-impact is only defined for scores 1 and 2."""


class EmptyCorpus(LitchainError):
    """Statistics over an empty chain collection."""


class ChainTooShort(LitchainError):
    """Corruption needs at least one intermediate node."""


class PoolExhausted(LitchainError):
    """No same-year (or +/-1 year) distractor candidate is available."""


class DistractorUnavailable(LitchainError):
    """No coherent distractor sub-chain fits the requested break layout."""


class InvalidStride(LitchainError):
    """Window stride must be a positive integer."""


class InsufficientGroups(LitchainError):
    """Fewer review groups than requested splits."""


class LeakageError(LitchainError):
    """A review id appears in more than one split."""

    def __init__(self, review_id: str, splits: tuple = ()):
        msg = f"review_id {review_id!r} leaks across splits"
        if splits:
            msg += f": {sorted(splits)}"
        super().__init__(msg)
        self.review_id = review_id


class ShapeError(LitchainError):
    """Metric inputs have mismatched lengths or ragged shapes."""


class TemplateError(LitchainError):
    """A prompt template contains an unresolvable placeholder."""

    def __init__(self, placeholder: str):
        super().__init__(f"unresolved template placeholder {{{placeholder}}}")
        self.placeholder = placeholder


class ConfigError(LitchainError):
    """A pipeline config value is missing or out of range."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class StageDependencyError(LitchainError):
    """A pipeline stage was run before the stage it depends on."""

    def __init__(self, missing_stage: str, needed_by: str):
        super().__init__(
            f"stage {needed_by!r} needs artifacts from {missing_stage!r}; run that stage first"
        )
        self.missing_stage = missing_stage
        self.needed_by = needed_by
