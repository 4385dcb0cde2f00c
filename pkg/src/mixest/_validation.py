"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_observations(X) -> np.ndarray:
    """Return univariate observations as a finite 1-d float array.

    Accepts a 1-d array or a single-column 2-d array, as scikit-learn
    estimators receive it.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    arr = check_array(arr, ensure_2d=True, dtype=float)
    if arr.shape[1] != 1:
        raise ValueError(f"expected univariate observations, got {arr.shape[1]} columns")
    return arr[:, 0]


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not math.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_nonnegative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    return float(value)


def check_seed(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral) and seed >= 0:
        return int(seed)
    raise ValueError(f"random_state must be a nonnegative integer or None, got {seed!r}")
