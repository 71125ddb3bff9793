"""Input validation helpers and shared exception types."""

import numpy as np


class ConfigError(ValueError):
    """Raised when an experiment configuration is malformed or inconsistent."""


class CFLViolationError(ValueError):
    """Raised when a requested time step violates the scheme's stability bound."""


class NotSPDError(ValueError):
    """Raised when a matrix required to be symmetric positive definite is not."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance."""


def check_count(name, value, minimum=1):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(name, value):
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_interval(name_lo, lo, name_hi, hi):
    lo, hi = float(lo), float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueError(f"invalid extent: require {name_lo} < {name_hi}, "
                         f"got {lo} >= {hi}")
    return lo, hi


def as_vector(name, x, length=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if length is not None and x.shape[0] != length:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {length}")
    return x


def as_matrix(name, x, shape=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {x.shape}")
    if shape is not None and x.shape != tuple(shape):
        raise ValueError(f"{name} has shape {x.shape}, expected {tuple(shape)}")
    return x


def check_symmetric(name, a, tol=1e-10):
    a = as_matrix(name, a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return a
