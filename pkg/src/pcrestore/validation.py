"""Input validation helpers shared by every public entry point."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import EmptyCloud, InvalidPointCloud, TooFewPoints


def check_points(points, *, min_points: int = 1, name: str = "points") -> np.ndarray:
    """Coerce input to a float64 (N, 3) array and validate it.

    Accepts anything np.asarray understands. Returns a C-contiguous float64
    copy only when coercion requires one; otherwise the original array is
    returned untouched so callers can rely on no hidden copies.

    Raises InvalidPointCloud for wrong shape or non-finite values,
    EmptyCloud when N == 0 and at least one point is required.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidPointCloud(
            f"{name} must have shape (N, 3), got {arr.shape}"
        )
    if arr.shape[0] == 0:
        if min_points > 0:
            raise EmptyCloud(f"{name} is empty")
        return arr
    if not np.isfinite(arr).all():
        raise InvalidPointCloud(f"{name} contains non-finite values")
    if arr.shape[0] < min_points:
        raise TooFewPoints(
            f"{name} has {arr.shape[0]} points, need at least {min_points}"
        )
    return arr


def check_positive(value, name: str, *, strict: bool = True) -> float:
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return v


def check_int(value, name: str, *, minimum: int = 0) -> int:
    if not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    v = int(value)
    if v < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {v}")
    return v


def check_unit_interval(value, name: str, *, low_open: bool = False, high_open: bool = False) -> float:
    v = float(value)
    low_ok = v > 0.0 if low_open else v >= 0.0
    high_ok = v < 1.0 if high_open else v <= 1.0
    if not np.isfinite(v) or not (low_ok and high_ok):
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return v


def as_rng(seed) -> np.random.Generator:
    """Normalize a seed-like argument to a numpy Generator.

    None means fresh OS entropy. An existing Generator passes through so a
    caller can thread one rng across several stages.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
