"""Exception hierarchy shared by every fedsim module."""


class FedSimError(Exception):
    """Base class for all simulator errors."""


class ShapeError(FedSimError, ValueError):
    """Array or vector dimensions do not line up."""


class EmptyBatchError(FedSimError, ValueError):
    """An operation received zero samples."""


class DegenerateDatasetError(FedSimError, ValueError):
    """A training set holds only one class.

    ``center_index`` is filled in when the error is raised from inside a
    federated round so the offending data center can be identified.
    """

    def __init__(self, message, center_index=None):
        if center_index is not None:
            message = f"data center {center_index}: {message}"
        super().__init__(message)
        self.center_index = center_index


class DegenerateEvaluationError(FedSimError, ValueError):
    """A score set is missing one of the two classes."""


class CheckpointFormatError(FedSimError, ValueError):
    """A checkpoint byte stream is corrupt or cannot be written."""


class DatasetFormatError(FedSimError, ValueError):
    """A dataset file is malformed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(FedSimError, ValueError):
    """A federation or evaluation protocol precondition was violated."""


class SpecError(FedSimError, ValueError):
    """A domain, config or experiment spec is invalid."""


class UnknownDomainError(FedSimError, KeyError):
    """A domain id was requested that is not present."""
