"""Exception types shared across fedchat modules."""


class FedchatError(Exception):
    """Base class for all fedchat errors."""


class SequenceTooLongError(FedchatError):
    """Token sequence exceeds the model context length."""


class IdOutOfRangeError(FedchatError):
    """A token id is outside the vocabulary."""


class EmptyMaskError(FedchatError):
    """Loss requested over a batch with no unmasked positions."""


class MisalignedParamsError(FedchatError):
    """Parameter sets do not share the same name/shape structure."""


class EmptyTextError(FedchatError):
    """Text input is empty where content is required."""


class UnknownTargetError(FedchatError):
    """Adapter target name not present in the parameter set."""


class NonMatrixTargetError(FedchatError):
    """Adapter target is not a 2-D tensor."""


class BaseHashMismatchError(FedchatError):
    """Checkpoint diff applied to a base with a different content hash."""


class NonFiniteValueError(FedchatError):
    """Tensor contains NaN or infinite values."""


class EmptyDatasetError(FedchatError):
    """Client has no training batches."""


class EmptyListError(FedchatError):
    """Aggregation requested over an empty list of parameter sets."""


class EmptyPromptSetError(FedchatError):
    """Role prompt set contains no input/output pairs."""


class EmptyBlockError(FedchatError):
    """Block has no text content."""


class InvalidEncodingError(FedchatError):
    """Document bytes are not valid UTF-8."""


class FormatVersionMismatchError(FedchatError):
    """Persisted file has an unexpected format name or version."""


class EmptyCorpusError(FedchatError):
    """Operation requires at least one block in the corpus."""


class DimensionMismatchError(FedchatError):
    """Query vector dimension does not match the index."""


class EmptyCandidatesError(FedchatError):
    """Rerank requested with no candidate ids."""


class NoContextError(FedchatError):
    """No block in the corpus is relevant enough to answer from."""
