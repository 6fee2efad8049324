"""Exception hierarchy shared across the package."""


class DGAError(Exception):
    """Base class for all package errors."""


class DimensionError(DGAError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(DGAError):
    """An operation was called outside its stated preconditions."""


class SceneError(DGAError):
    """A scene violates structural requirements (too few proposals, ...)."""


class VocabularyError(DGAError):
    """A token or token id is not covered by the vocabulary."""


class DataError(DGAError):
    """A dataset is unusable (empty, missing fields, ...)."""


class ParseError(DataError):
    """A dataset file could not be parsed; message names the record."""


class GenerationError(DGAError):
    """Synthetic generation could not satisfy its constraints."""


class CompatibilityError(DGAError):
    """Checkpoint and dataset disagree (vocabulary, feature dims, ...)."""
