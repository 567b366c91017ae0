"""Input validation helpers shared across the package.

Grids are plain ``numpy`` arrays in float64. Element-wise operations never
broadcast: a shape mismatch is always an error.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "as_grid",
    "as_image_grid",
    "as_mask",
    "check_same_shape",
]


class ShapeMismatchError(ValueError):
    """Two grids that must share a shape do not."""


def as_grid(values, name: str = "grid") -> np.ndarray:
    """Coerce to a float64 array and reject empty or non-finite input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one element")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_image_grid(values, name: str = "image") -> np.ndarray:
    """Like :func:`as_grid` but requires a (channels, height, width) layout."""
    arr = as_grid(values, name)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (channels, height, width), got {arr.shape}")
    return arr


def as_mask(values, shape=None, name: str = "mask") -> np.ndarray:
    arr = np.asarray(values, dtype=bool)
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeMismatchError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("first", "second")) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}"
        )
