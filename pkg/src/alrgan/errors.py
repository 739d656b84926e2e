"""Shared error taxonomy (shape/graph errors live in alrgan.tensor)."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


class DataError(ValueError):
    """Input data violates a documented precondition."""


class VocabularyError(KeyError):
    """Token outside the closed synthetic vocabulary."""


class TrainingFault(RuntimeError):
    """Non-finite loss or other unrecoverable numeric failure during training."""
