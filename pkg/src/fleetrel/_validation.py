"""Input validation helpers shared by the estimators and functions."""

import math

import numpy as np

from .exceptions import FleetrelError


def check_samples(x, *, name="samples", min_samples=1, positive=False):
    """Return ``x`` as a finite 1-D float array, raising on bad input."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise FleetrelError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_samples:
        raise FleetrelError(f"{name}: need at least {min_samples} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise FleetrelError(f"{name} contains non-finite values")
    if positive and np.any(arr <= 0):
        raise FleetrelError(f"{name} must be strictly positive")
    return arr


def check_positive(value, name):
    if not (isinstance(value, (int, float, np.number)) and math.isfinite(value) and value > 0):
        raise FleetrelError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_fraction(value, name, *, closed_right=True):
    ok = 0 <= value <= 1 if closed_right else 0 <= value < 1
    if not ok:
        bracket = "]" if closed_right else ")"
        raise FleetrelError(f"{name} must lie in [0, 1{bracket}, got {value!r}")
    return value


def nearest_rank(sorted_values, p):
    """Nearest-rank percentile of an already sorted sequence, ``0 < p <= 1``."""
    n = len(sorted_values)
    if n == 0:
        raise FleetrelError("percentile of an empty sequence")
    if not 0 < p <= 1:
        raise FleetrelError(f"percentile p must lie in (0, 1], got {p!r}")
    # guard against p*n landing a hair above an integer
    rank = max(1, math.ceil(p * n - 1e-9))
    return sorted_values[rank - 1]
