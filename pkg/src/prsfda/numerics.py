"""Numerically stable elementwise primitives and a finite-difference oracle.

All tensors are plain float64 numpy arrays in row-major layout. Every public
function validates its inputs and guarantees finite outputs.
"""

import numpy as np

from .errors import InvalidInputError, OracleFailureError

# Global probability clamp. Keeps -log(1 - p) finite when p -> 1.
PROB_EPS = 1e-7

# Slack tolerated when checking that probabilities lie in [0, 1].
RANGE_SLACK = 1e-9


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: input contains non-finite values")
    return arr


def check_probabilities(p, name="probs"):
    """Validate an array of probabilities, allowing RANGE_SLACK overshoot."""
    arr = _as_float_array(p, name)
    if arr.size and (arr.min() < -RANGE_SLACK or arr.max() > 1.0 + RANGE_SLACK):
        raise InvalidInputError(
            f"{name}: values outside [0, 1] (min={arr.min()}, max={arr.max()})"
        )
    return arr


def clamp_probabilities(p):
    """Clamp probabilities to [PROB_EPS, 1 - PROB_EPS]."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def softmax(logits):
    """Shift-invariant softmax along the last axis."""
    arr = _as_float_array(logits, "softmax")
    if arr.ndim < 1 or arr.shape[-1] < 2:
        raise InvalidInputError("softmax: last extent must be >= 2")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def stable_log(p):
    """log(p) with the argument clamped to [PROB_EPS, 1 - PROB_EPS]."""
    arr = check_probabilities(p, "stable_log")
    return np.log(clamp_probabilities(arr))


def stable_log1m(p):
    """log(1 - p) with the argument clamped to [PROB_EPS, 1 - PROB_EPS]."""
    arr = check_probabilities(p, "stable_log1m")
    return np.log(clamp_probabilities(1.0 - arr))


def finite_diff_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector.

    Second-order accurate; the independent oracle used to validate every
    hand-derived backward pass in this package.
    """
    if h <= 0:
        raise InvalidInputError("finite_diff_gradient: h must be positive")
    x = np.asarray(x, dtype=np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailureError(
                f"finite_diff_gradient: non-finite function value at coordinate {i}"
            )
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
