"""Exception hierarchy shared by every module."""


class UniconError(Exception):
    """Base class for all domain errors raised by the package."""


class InvalidSpecError(UniconError, ValueError):
    pass


class IngestionError(UniconError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(UniconError, ValueError):
    pass


class NoValidPartnerError(UniconError, ValueError):
    """No out-of-class sample exists to mix with an anchor."""


class PositiveFreeAnchorError(UniconError, ValueError):
    """An anchor has no same-class positive (|D_i| = 0)."""


class EmbeddingError(UniconError, ValueError):
    """Embedding rows are non-finite or too far from unit norm."""


class DegenerateEmbeddingError(UniconError, ArithmeticError):
    """Encoder output had zero norm before projection."""


class ProbeError(UniconError, ValueError):
    pass


class TrainingDiverged(UniconError, ArithmeticError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value
