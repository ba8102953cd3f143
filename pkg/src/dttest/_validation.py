"""Small input-checking helpers used by the estimators and model types."""

import math

import numpy as np

from .exceptions import InvalidParameterError, LengthMismatchError, NegativePowerError


def check_positive(name, value, strict=True):
    value = float(value)
    if not math.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidParameterError(f"{name} must be finite and {bound}, got {value!r}")
    return value


def check_fraction(name, value, allow_zero=True):
    value = float(value)
    lo_ok = value >= 0 if allow_zero else value > 0
    if not (math.isfinite(value) and lo_ok and value <= 1):
        raise InvalidParameterError(f"{name} must lie in {'[0' if allow_zero else '(0'}, 1], got {value!r}")
    return value


def check_finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise InvalidParameterError(f"{name} must be finite, got {value!r}")
    return value


def check_powers(powers, n_zones):
    """Return zone powers as a float array after length and sign checks."""
    arr = np.asarray(powers, dtype=float).reshape(-1)
    if arr.shape[0] != n_zones:
        raise LengthMismatchError(f"expected {n_zones} zone powers, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("zone powers must be finite")
    if np.any(arr < 0):
        raise NegativePowerError(f"zone powers must be >= 0, got {arr.tolist()}")
    return arr


def check_snapshots(snapshots, min_count=1):
    """Materialise an iterable of snapshots into a list and check completeness."""
    from .snapshot import Snapshot

    snaps = list(snapshots)
    for s in snaps:
        if not isinstance(s, Snapshot):
            raise TypeError(f"expected Snapshot, got {type(s).__name__}")
    if len(snaps) < min_count:
        raise ValueError(f"need at least {min_count} snapshots, got {len(snaps)}")
    return snaps
