"""Stable scalar/array math primitives shared by the whole package.

Thin, axis-aware wrappers around the backend kernels in :mod:`bnnood.kernels`.
Everything here is numerically safe for large-magnitude inputs: softmax and
log-sum-exp shift by the row maximum, softplus never overflows, and entropy
treats 0*log(0) as 0.
"""

import numpy as np

from . import kernels


def softplus(x, beta: float = 1.0):
    """Softplus (1/beta) * ln(1 + exp(beta * x)).

    beta must be positive.  Monotone, positive, and asymptotically the
    identity for large x.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    return kernels.softplus(np.asarray(x, dtype=np.float64), beta)


def _apply_lastaxis(func, a, axis, reduces: bool):
    """Run a last-axis kernel along an arbitrary axis."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        raise ValueError("expected at least a 1-D array")
    axis = int(axis)
    if axis != -1 and axis != a.ndim - 1:
        moved = np.moveaxis(a, axis, -1)
        out = func(moved)
        if reduces:
            return out
        return np.moveaxis(out, -1, axis)
    return func(a)


def log_sum_exp(logits, axis: int = -1):
    """ln(sum(exp(logits))) along ``axis``, shifted by the max for stability."""
    return _apply_lastaxis(kernels.logsumexp_lastaxis, logits, axis, reduces=True)


def softmax(logits, axis: int = -1):
    """Softmax along ``axis``; rows sum to 1 and are invariant to shifts."""
    return _apply_lastaxis(kernels.softmax_lastaxis, logits, axis, reduces=False)


def shannon_entropy(probs, axis: int = -1):
    """Shannon entropy in nats of a probability vector along ``axis``.

    Zero entries contribute zero (the 0 * log 0 = 0 convention).  Negative
    entries are rejected; rows need not be exactly normalized, the caller
    owns that contract.
    """
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * np.log(p[nz])
    return -terms.sum(axis=axis)


def entropy_of_softmax(logits, axis: int = -1):
    """Entropy (nats) of softmax(logits) without materializing probabilities.

    Fused and cancellation-free: H = lse - sum(p * z).  Preferred over
    ``shannon_entropy(softmax(x))`` on large logit tensors.
    """
    return _apply_lastaxis(kernels.entropy_lastaxis, logits, axis, reduces=True)
