"""Small input-validation helpers shared across modules."""

from __future__ import annotations

import numbers

import numpy as np


def check_int(value, name: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def as_generator(rng) -> np.random.Generator:
    """Coerce ``None``, an int seed, a SeedSequence or a Generator to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def check_state(i, j, N: int) -> tuple[int, int]:
    A = N * (N - 1) // 2
    i = check_int(i, "i")
    j = check_int(j, "j")
    if not (0 <= i <= N and 0 <= j <= A):
        raise ValueError(f"state ({i}, {j}) outside [0,{N}]x[0,{A}]")
    return i, j


def check_path(path, name: str = "path", min_length: int = 0) -> np.ndarray:
    arr = np.asarray(path, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
