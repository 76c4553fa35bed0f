"""Input validation helpers shared by the modules and the estimator wrappers."""
import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .errors import InputError


def check_vector(x, size, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.shape[0] != size:
        raise InputError(f"{name} must be a vector of length {size}, got shape {x.shape}")
    return x


def check_window_length(k):
    if not isinstance(k, numbers.Integral) or isinstance(k, bool):
        raise InputError(f"window length k must be an integer, got {k!r}")
    if k < 2:
        raise InputError(f"window length k must be >= 2, got {k}")
    return int(k)


def check_grid(X, name="X", min_rows=1):
    """2-D float array where NaN marks a missing cell; infinities are rejected."""
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan",
                        ensure_min_samples=min_rows, copy=False)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from exc
    return X


def check_step(t, lo, hi, what="step"):
    from .errors import StepRangeError
    if not isinstance(t, numbers.Integral) or isinstance(t, bool):
        raise InputError(f"{what} must be an integer, got {t!r}")
    if t < lo or t > hi:
        raise StepRangeError(f"{what} {t} outside [{lo}, {hi}]")
    return int(t)
