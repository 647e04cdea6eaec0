from typing import Optional


class IUMError(Exception):
    """Base class for every error raised by the search engine"""


class CorpusFormatError(IUMError):
    """A corpus file line could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicatePassageError(IUMError):
    def __init__(self, passage_id: str):
        super().__init__(f"duplicate passage_id: {passage_id}")
        self.passage_id = passage_id


class IndexFormatError(IUMError):
    """An index snapshot is truncated or has the wrong magic/version"""


class DimensionMismatchError(IUMError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"feature dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class TrainingDivergedError(IUMError):
    def __init__(self, batch_index: int, loss: float):
        super().__init__(f"non-finite loss {loss} at batch {batch_index}")
        self.batch_index = batch_index
        self.loss = loss


class CheckpointError(IUMError):
    """A checkpoint could not be read back"""


class ProtocolError(IUMError):
    """A wire message violates the serving protocol"""


class ConfigError(IUMError):
    def __init__(self, message: str, field: Optional[str] = None):
        prefix = f"{field}: " if field else ""
        super().__init__(f"{prefix}{message}")
        self.field = field
