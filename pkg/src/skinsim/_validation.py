"""Input validation helpers shared by the public API.

All helpers coerce to float64 ndarrays and raise InputError with the
offending argument named, so estimator and function entry points stay
uniform about what they reject.
"""

import numbers

import numpy as np

from .errors import InputError


def check_array(a, name, shape=None, ndim=None, dtype=np.float64, finite=True):
    """Coerce `a` to an ndarray and check shape/ndim/finiteness.

    `shape` entries set to None are unconstrained.
    """
    try:
        a = np.asarray(a, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot be coerced to a numeric array ({exc})")
    if ndim is not None and a.ndim != ndim:
        raise InputError(f"{name}: expected {ndim} dimensions, got {a.ndim}")
    if shape is not None:
        if a.ndim != len(shape):
            raise InputError(
                f"{name}: expected shape {shape}, got {a.shape}"
            )
        for want, got in zip(shape, a.shape):
            if want is not None and want != got:
                raise InputError(f"{name}: expected shape {shape}, got {a.shape}")
    if finite and a.size and not np.all(np.isfinite(a)):
        raise InputError(f"{name}: contains non-finite values")
    return a


def check_points(X, name="points", min_points=1):
    """Validate an (n, 3) float position array."""
    X = check_array(X, name, ndim=2)
    if X.shape[1] != 3:
        raise InputError(f"{name}: expected (n, 3) positions, got {X.shape}")
    if X.shape[0] < min_points:
        raise InputError(f"{name}: need at least {min_points} points, got {X.shape[0]}")
    return X


def check_handle_vector(z, n_handles, name="z"):
    """Validate a flattened handle-transform vector of length 12*m."""
    z = check_array(z, name, ndim=1)
    if z.shape[0] != 12 * n_handles:
        raise InputError(
            f"{name}: expected length {12 * n_handles} for {n_handles} handles, "
            f"got {z.shape[0]}"
        )
    return z


def check_scalar(x, name, minimum=None, maximum=None,exclusive_min=False):
    """Validate a finite real scalar, optionally bounded."""
    if not isinstance(x, numbers.Real) or isinstance(x, bool):
        raise InputError(f"{name}: expected a real number, got {type(x).__name__}")
    x = float(x)
    if not np.isfinite(x):
        raise InputError(f"{name}: must be finite")
    if minimum is not None:
        if exclusive_min and x <= minimum:
            raise InputError(f"{name}: must be > {minimum}, got {x}")
        if not exclusive_min and x < minimum:
            raise InputError(f"{name}: must be >= {minimum}, got {x}")
    if maximum is not None and x > maximum:
        raise InputError(f"{name}: must be <= {maximum}, got {x}")
    return x


def check_index(x, name, minimum=0, maximum=None):
    """Validate an integer index or count."""
    if isinstance(x, bool) or not isinstance(x, numbers.Integral):
        raise InputError(f"{name}: expected an integer, got {type(x).__name__}")
    x = int(x)
    if x < minimum:
        raise InputError(f"{name}: must be >= {minimum}, got {x}")
    if maximum is not None and x > maximum:
        raise InputError(f"{name}: must be <= {maximum}, got {x}")
    return x


def check_seed(seed, name="seed"):
    return check_index(seed, name, minimum=0)
