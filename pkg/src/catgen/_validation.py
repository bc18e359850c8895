"""Input validation helpers."""

import numpy as np

from .exceptions import InputError


def check_matrix(X, name="X", ensure_min_rows=1):
    """Return ``X`` as a finite 2-D float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise InputError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < ensure_min_rows:
        raise InputError(f"{name} needs at least {ensure_min_rows} rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def check_vector(y, name="y", length=None, allow_nan=False):
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y.ravel()
    if y.ndim != 1:
        raise InputError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if length is not None and y.shape[0] != length:
        raise InputError(f"{name} has length {y.shape[0]}, expected {length}")
    bad = ~np.isfinite(y)
    if allow_nan:
        bad &= ~np.isnan(y)
    if np.any(bad):
        raise InputError(f"{name} contains non-finite values")
    return y


def check_binary(y, name="y"):
    y = check_vector(y, name)
    if not np.all((y == 0) | (y == 1)):
        raise InputError(f"{name} must contain only 0/1 values")
    return y


def check_probability(p, name="probability", low=0.0, high=1.0):
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < low) or np.any(p > high):
        raise InputError(f"{name} must lie in [{low}, {high}]")
    return p


def check_feature_dim(X, expected, name="X"):
    X = check_matrix(X, name)
    if X.shape[1] != expected:
        raise InputError(f"{name} has {X.shape[1]} features, model was fitted with {expected}")
    return X
