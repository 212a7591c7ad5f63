"""Hot numeric kernels for local training.

Each kernel has a numba ``@njit`` build and a pure-numpy build with the
same semantics. The numpy path is selected by setting the environment
variable ``ASYNCFL_NO_NUMBA=1`` before import (or when numba is not
installed). ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("ASYNCFL_NO_NUMBA", "").strip().lower() in (
        "1",
        "true",
        "yes",
    )


try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _numba_disabled()


# ---------------------------------------------------------------------------
# numpy implementations (reference semantics)
# ---------------------------------------------------------------------------

def _linreg_losses_np(w, X, y):
    r = X @ w - y
    return 0.5 * r * r


def _linreg_sgd_np(w0, X, y, batch_idx, etas):
    w = w0.copy()
    for q in range(batch_idx.shape[0]):
        idx = batch_idx[q]
        Xb = X[idx]
        r = Xb @ w - y[idx]
        grad = Xb.T @ r / idx.shape[0]
        w -= etas[q] * grad
    return w


def _softmax_losses_np(W, X, y):
    # W is (n_classes, dim); per-sample cross-entropy.
    logits = X @ W.T
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(X.shape[0]), y]


def _softmax_sgd_np(W0, X, y, batch_idx, etas):
    W = W0.copy()
    for q in range(batch_idx.shape[0]):
        idx = batch_idx[q]
        Xb = X[idx]
        yb = y[idx]
        logits = Xb @ W.T
        m = logits.max(axis=1)
        p = np.exp(logits - m[:, None])
        p /= p.sum(axis=1)[:, None]
        p[np.arange(idx.shape[0]), yb] -= 1.0
        grad = p.T @ Xb / idx.shape[0]
        W -= etas[q] * grad
    return W


# ---------------------------------------------------------------------------
# numba implementations (explicit loops, nopython)
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True)
    def _linreg_losses_nb(w, X, y):
        n = X.shape[0]
        out = np.empty(n)
        for i in range(n):
            r = -y[i]
            for k in range(X.shape[1]):
                r += X[i, k] * w[k]
            out[i] = 0.5 * r * r
        return out

    @njit(cache=True)
    def _linreg_sgd_nb(w0, X, y, batch_idx, etas):
        w = w0.copy()
        d = X.shape[1]
        grad = np.empty(d)
        for q in range(batch_idx.shape[0]):
            nb = batch_idx.shape[1]
            for k in range(d):
                grad[k] = 0.0
            for j in range(nb):
                i = batch_idx[q, j]
                r = -y[i]
                for k in range(d):
                    r += X[i, k] * w[k]
                for k in range(d):
                    grad[k] += r * X[i, k]
            for k in range(d):
                w[k] -= etas[q] * grad[k] / nb
        return w

    @njit(cache=True)
    def _softmax_losses_nb(W, X, y):
        n = X.shape[0]
        c = W.shape[0]
        out = np.empty(n)
        logits = np.empty(c)
        for i in range(n):
            m = -1e300
            for a in range(c):
                z = 0.0
                for k in range(X.shape[1]):
                    z += X[i, k] * W[a, k]
                logits[a] = z
                if z > m:
                    m = z
            s = 0.0
            for a in range(c):
                s += np.exp(logits[a] - m)
            out[i] = m + np.log(s) - logits[y[i]]
        return out

    @njit(cache=True)
    def _softmax_sgd_nb(W0, X, y, batch_idx, etas):
        W = W0.copy()
        c = W.shape[0]
        d = X.shape[1]
        grad = np.empty((c, d))
        logits = np.empty(c)
        p = np.empty(c)
        for q in range(batch_idx.shape[0]):
            nb = batch_idx.shape[1]
            for a in range(c):
                for k in range(d):
                    grad[a, k] = 0.0
            for j in range(nb):
                i = batch_idx[q, j]
                m = -1e300
                for a in range(c):
                    z = 0.0
                    for k in range(d):
                        z += X[i, k] * W[a, k]
                    logits[a] = z
                    if z > m:
                        m = z
                s = 0.0
                for a in range(c):
                    p[a] = np.exp(logits[a] - m)
                    s += p[a]
                for a in range(c):
                    p[a] /= s
                p[y[i]] -= 1.0
                for a in range(c):
                    for k in range(d):
                        grad[a, k] += p[a] * X[i, k]
            for a in range(c):
                for k in range(d):
                    W[a, k] -= etas[q] * grad[a, k] / nb
        return W

    linreg_losses = _linreg_losses_nb
    linreg_sgd = _linreg_sgd_nb
    softmax_losses = _softmax_losses_nb
    softmax_sgd = _softmax_sgd_nb
else:
    linreg_losses = _linreg_losses_np
    linreg_sgd = _linreg_sgd_np
    softmax_losses = _softmax_losses_np
    softmax_sgd = _softmax_sgd_np
