"""Small argument and array checks shared across modules."""

import numbers

import numpy as np


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_finite(array, name):
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    return array


def check_length(array, expected, name):
    array = np.asarray(array)
    if array.size != expected:
        raise ValueError(f"{name} has {array.size} entries, expected {expected}")
    return array
