"""Small input-validation helpers used by the public entry points."""

import numpy as np

from .errors import ConfigurationError


def check_positive(name, value, allow_zero=False):
    """Return ``value`` as a float, requiring it to be positive."""
    v = float(value)
    if not np.isfinite(v):
        raise ConfigurationError(f"{name} must be finite, got {value!r}")
    if v < 0 or (v == 0 and not allow_zero):
        bound = "nonnegative" if allow_zero else "positive"
        raise ConfigurationError(f"{name} must be {bound}, got {value!r}")
    return v


def check_fraction(name, value):
    """Return ``value`` as a float in the half-open interval (0, 1]."""
    v = float(value)
    if not 0.0 < v <= 1.0:
        raise ConfigurationError(f"{name} must lie in (0, 1], got {value!r}")
    return v


def check_nonneg_int(name, value):
    v = int(value)
    if v != value or v < 0:
        raise ConfigurationError(f"{name} must be a nonnegative integer, got {value!r}")
    return v


def check_choice(name, value, choices):
    if value not in choices:
        opts = ", ".join(sorted(str(c) for c in choices))
        raise ConfigurationError(f"{name} must be one of {{{opts}}}, got {value!r}")
    return value


def as_node_array(name, value, n_nodes, dtype=float):
    """Broadcast a scalar or length-K sequence to a per-node array."""
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(n_nodes, arr[()], dtype=dtype)
    if arr.shape != (n_nodes,):
        raise ConfigurationError(
            f"{name} must be a scalar or a length-{n_nodes} sequence, got shape {arr.shape}"
        )
    return arr


def check_distance_matrix(X):
    """Validate a partially observed symmetric distance matrix.

    Unobserved pairs are NaN. Returns the validated float array.
    """
    D = np.asarray(X, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ConfigurationError(f"distance matrix must be square, got shape {D.shape}")
    finite = np.isfinite(D)
    if not (finite == finite.T).all():
        raise ConfigurationError("observation pattern of the distance matrix is not symmetric")
    if not np.allclose(D[finite], D.T[finite]):
        raise ConfigurationError("distance matrix is not symmetric on observed entries")
    if (D[finite] < 0).any():
        raise ConfigurationError("distances must be nonnegative")
    return D
