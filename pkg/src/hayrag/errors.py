"""Exception types shared across the package."""


class HayragError(Exception):
    """Base class for library errors."""


class CorpusFormatError(HayragError):
    """Corpus file failed to parse or violated an invariant."""


class GenerationError(HayragError):
    """Benchmark generation could not satisfy its constraints."""


class DispatchError(HayragError):
    """Adapter endpoint failed; carries the partial transcript."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class TrainingDiverged(HayragError):
    """Non-finite loss during training; carries the last good params."""

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log
