"""Exception types shared across the package."""


class SupmatchError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SupmatchError, ValueError):
    """A label or index lies outside its declared domain."""


class ValidationError(SupmatchError, ValueError):
    """Inputs violate a documented precondition."""


class SamplingError(SupmatchError, RuntimeError):
    """A sampler cannot produce a sample (e.g. an empty source pool)."""


class IngestionError(SupmatchError, RuntimeError):
    """Raw data files are missing or malformed."""


class StateError(SupmatchError, RuntimeError):
    """An operation was invoked before its required state exists."""


class HiddenLabelError(SupmatchError, RuntimeError):
    """A training code path tried to read hidden deployment labels."""


class TrainingError(SupmatchError, RuntimeError):
    """Training diverged or an optimizer step failed."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class ConfigError(SupmatchError, ValueError):
    """An experiment config is malformed or contains unknown keys."""
