"""Hot numeric kernels: stable elementwise maps and softmax-family reductions.

Every kernel exists in two variants that agree to within an ulp or two: a
vectorized pure-numpy implementation (always available, suffix ``_np``) and a
numba ``@njit`` fused loop compiled when the numba backend is active.  The
public names bind to the selected variant; see :mod:`bnnood.backend`.

All kernels take and return float64 arrays.  Reductions operate over the last
axis (class axis) so callers can pass logit tensors of any leading shape.
"""

import numpy as np

from .backend import USING_NUMBA, jit

# ---------------------------------------------------------------------------
# numpy variants
# ---------------------------------------------------------------------------


def softplus_np(x, beta=1.0):
    """(1/beta) * ln(1 + exp(beta*x)), overflow-safe for any magnitude."""
    return np.logaddexp(0.0, beta * x) / beta


def sigmoid_np(x):
    """Logistic function, computed on a sign split to avoid exp overflow."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logsumexp_lastaxis_np(a):
    mx = a.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=-1, keepdims=True)))[..., 0]


def softmax_lastaxis_np(a):
    ex = np.exp(a - a.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


def entropy_lastaxis_np(a):
    """Shannon entropy (nats) of softmax(a) along the last axis.

    Uses H = -sum_i p_i * (z_i - lse), which never takes log of a
    zero probability.
    """
    mx = a.max(axis=-1, keepdims=True)
    shifted = a - mx
    ex = np.exp(shifted)
    z = ex.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(z)
    p = ex / z
    return -(p * logp).sum(axis=-1)


def mean_softmax_axis0_np(t):
    """Mean over axis 0 of softmax along the last axis; t is [M, B, C]."""
    return softmax_lastaxis_np(t).mean(axis=0)


_NUMPY_IMPLS = {
    "softplus": softplus_np,
    "sigmoid": sigmoid_np,
    "logsumexp_lastaxis": logsumexp_lastaxis_np,
    "softmax_lastaxis": softmax_lastaxis_np,
    "entropy_lastaxis": entropy_lastaxis_np,
    "mean_softmax_axis0": mean_softmax_axis0_np,
}

# ---------------------------------------------------------------------------
# numba variants (flat / 2-D inner kernels plus shape-normalizing wrappers)
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @jit
    def _softplus_flat(x, beta):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            v = beta * x[i]
            m = v if v > 0.0 else 0.0
            out[i] = (m + np.log1p(np.exp(-abs(v)))) / beta
        return out

    @jit
    def _sigmoid_flat(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            v = x[i]
            if v >= 0.0:
                out[i] = 1.0 / (1.0 + np.exp(-v))
            else:
                e = np.exp(v)
                out[i] = e / (1.0 + e)
        return out

    @jit
    def _logsumexp_rows(a):
        n_rows, n_cols = a.shape
        out = np.empty(n_rows)
        for r in range(n_rows):
            mx = a[r, 0]
            for c in range(1, n_cols):
                if a[r, c] > mx:
                    mx = a[r, c]
            s = 0.0
            for c in range(n_cols):
                s += np.exp(a[r, c] - mx)
            out[r] = mx + np.log(s)
        return out

    @jit
    def _softmax_rows(a):
        n_rows, n_cols = a.shape
        out = np.empty_like(a)
        for r in range(n_rows):
            mx = a[r, 0]
            for c in range(1, n_cols):
                if a[r, c] > mx:
                    mx = a[r, c]
            s = 0.0
            for c in range(n_cols):
                e = np.exp(a[r, c] - mx)
                out[r, c] = e
                s += e
            for c in range(n_cols):
                out[r, c] /= s
        return out

    @jit
    def _entropy_rows(a):
        n_rows, n_cols = a.shape
        out = np.empty(n_rows)
        for r in range(n_rows):
            mx = a[r, 0]
            for c in range(1, n_cols):
                if a[r, c] > mx:
                    mx = a[r, c]
            s = 0.0
            for c in range(n_cols):
                s += np.exp(a[r, c] - mx)
            lse = mx + np.log(s)
            acc = 0.0
            for c in range(n_cols):
                logp = a[r, c] - lse
                acc += np.exp(logp) * logp
            out[r] = -acc
        return out

    @jit
    def _mean_softmax_3d(t):
        n_models, n_inputs, n_cols = t.shape
        out = np.zeros((n_inputs, n_cols))
        for m in range(n_models):
            for b in range(n_inputs):
                mx = t[m, b, 0]
                for c in range(1, n_cols):
                    if t[m, b, c] > mx:
                        mx = t[m, b, c]
                s = 0.0
                for c in range(n_cols):
                    s += np.exp(t[m, b, c] - mx)
                for c in range(n_cols):
                    out[b, c] += np.exp(t[m, b, c] - mx) / s
        return out / n_models

    def _as_f64(x):
        arr = np.asarray(x, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        return arr

    def softplus_nb(x, beta=1.0):
        arr = _as_f64(x)
        return _softplus_flat(arr.ravel(), float(beta)).reshape(arr.shape)

    def sigmoid_nb(x):
        arr = _as_f64(x)
        return _sigmoid_flat(arr.ravel()).reshape(arr.shape)

    def logsumexp_lastaxis_nb(a):
        arr = _as_f64(a)
        return _logsumexp_rows(arr.reshape(-1, arr.shape[-1])).reshape(arr.shape[:-1])

    def softmax_lastaxis_nb(a):
        arr = _as_f64(a)
        return _softmax_rows(arr.reshape(-1, arr.shape[-1])).reshape(arr.shape)

    def entropy_lastaxis_nb(a):
        arr = _as_f64(a)
        return _entropy_rows(arr.reshape(-1, arr.shape[-1])).reshape(arr.shape[:-1])

    def mean_softmax_axis0_nb(t):
        arr = _as_f64(t)
        if arr.ndim != 3:
            raise ValueError("expected a [models, inputs, classes] tensor")
        return _mean_softmax_3d(arr)

    softplus = softplus_nb
    sigmoid = sigmoid_nb
    logsumexp_lastaxis = logsumexp_lastaxis_nb
    softmax_lastaxis = softmax_lastaxis_nb
    entropy_lastaxis = entropy_lastaxis_nb
    mean_softmax_axis0 = mean_softmax_axis0_nb

else:
    softplus = softplus_np
    sigmoid = sigmoid_np
    logsumexp_lastaxis = logsumexp_lastaxis_np
    softmax_lastaxis = softmax_lastaxis_np
    entropy_lastaxis = entropy_lastaxis_np
    mean_softmax_axis0 = mean_softmax_axis0_np


def warmup():
    """Trigger JIT compilation of every kernel (no-op on the numpy backend)."""
    a = np.array([[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]])
    softplus(a)
    sigmoid(a)
    logsumexp_lastaxis(a)
    softmax_lastaxis(a)
    entropy_lastaxis(a)
    mean_softmax_axis0(a[None])
