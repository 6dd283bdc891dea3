"""Input validation helpers for latent and pixel arrays."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, DomainError, NumericError


def as_chunk(x, name="chunk", ndim=2):
    """Return ``x`` as a float64 array with ``ndim`` dims, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == ndim - 1 and ndim == 2:
        arr = arr[None, :]
    if arr.ndim != ndim:
        raise DimensionError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite entries")
    return arr


def same_shape(*arrays, names=None):
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "arguments"
        raise DimensionError(f"shape mismatch among {label}: {[a.shape for a in arrays]}")


def check_unit_time(t, name="t"):
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"{name}={t} outside [0, 1]")
    return t
