"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_covariates(X, n=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if n is not None and X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, expected {n}")
    return X


def check_treatment(T, n=None):
    T = np.asarray(T, dtype=float).ravel()
    if not np.all(np.isfinite(T)):
        raise ValueError("T contains non-finite values")
    if n is not None and T.shape[0] != n:
        raise ValueError(f"T has {T.shape[0]} entries, expected {n}")
    return T


def check_responses(V, n=None):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2:
        raise ValueError(f"V must be 2-dimensional (n, M), got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("V contains non-finite values")
    if n is not None and V.shape[0] != n:
        raise ValueError(f"V has {V.shape[0]} rows, expected {n}")
    return V


def check_xtv(X, T, V=None):
    """Validate aligned (X, T[, V]) columns and return them as float arrays."""
    T = check_treatment(T)
    n = T.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    X = check_covariates(X, n)
    if V is None:
        return X, T
    return X, T, check_responses(V, n)


def check_t_grid(t_grid):
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(t_grid)):
        raise ValueError("t_grid contains non-finite values")
    return t_grid


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")
