"""Small input-validation helpers used across estimators and samplers."""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError, ValidationError


def new_rng(seed) -> np.random.Generator:
    """Return a numpy Generator from a seed, Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_label(value: int, n: int, name: str) -> int:
    value = int(value)
    if not 0 <= value < n:
        raise DomainError(f"{name}={value} out of range [0, {n})")
    return value


def check_label_array(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise DomainError(f"{name} contains values outside [0, {n})")
    return arr


def check_same_length(name_a, a, name_b, b) -> None:
    if len(a) != len(b):
        raise ValidationError(
            f"{name_a} and {name_b} must have equal length ({len(a)} != {len(b)})"
        )


def check_proportion(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name}={value} must lie in [0, 1]")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ValidationError(f"{name}={value} must be positive")
    return value
