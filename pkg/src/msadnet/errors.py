class ContractError(ValueError):
    """An operation received inputs violating its preconditions."""


class DimensionError(ContractError):
    """Spatial extents are too small for the requested operation."""


class ConfigError(ValueError):
    """Invalid model, training or run configuration."""


class AuditError(AssertionError):
    """Closed-form and actual parameter counts disagree."""


class PNMParseError(ValueError):
    """Malformed PGM/PPM data. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history
