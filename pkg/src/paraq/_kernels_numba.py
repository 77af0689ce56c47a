"""Numba-compiled kernels: the default hot path.

All kernels are nopython + nogil so sampler, trainer and inference work can
overlap across OS threads. fastmath stays off: accumulation order is fixed
(outer loop over output units, inner loop over inputs in index order), which
makes a batched result bit-identical to its per-row results.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"

_JIT = {"cache": True, "nogil": True}


@njit(**_JIT)
def affine_rows(w, b, x):
    n = x.shape[0]
    o = w.shape[0]
    d = w.shape[1]
    out = np.empty((n, o), dtype=np.float64)
    for r in range(n):
        for i in range(o):
            acc = b[i]
            for j in range(d):
                acc += w[i, j] * x[r, j]
            out[r, i] = acc
    return out


@njit(**_JIT)
def relu(x):
    n, o = x.shape
    out = np.empty((n, o), dtype=np.float64)
    for r in range(n):
        for i in range(o):
            v = x[r, i]
            out[r, i] = v if v > 0.0 else 0.0
    return out


@njit(**_JIT)
def output_delta(q, actions, targets):
    n, o = q.shape
    delta = np.zeros((n, o), dtype=np.float64)
    for r in range(n):
        a = actions[r]
        delta[r, a] = (q[r, a] - targets[r]) / n
    return delta


@njit(**_JIT)
def weight_grad(delta, acts):
    n = delta.shape[0]
    o = delta.shape[1]
    d = acts.shape[1]
    dw = np.zeros((o, d), dtype=np.float64)
    for r in range(n):
        for i in range(o):
            dv = delta[r, i]
            if dv != 0.0:
                for j in range(d):
                    dw[i, j] += dv * acts[r, j]
    return dw


@njit(**_JIT)
def bias_grad(delta):
    n, o = delta.shape
    db = np.zeros(o, dtype=np.float64)
    for r in range(n):
        for i in range(o):
            db[i] += delta[r, i]
    return db


@njit(**_JIT)
def hidden_delta(delta, w, pre):
    n = delta.shape[0]
    o = w.shape[0]
    d = w.shape[1]
    out = np.empty((n, d), dtype=np.float64)
    for r in range(n):
        for j in range(d):
            if pre[r, j] > 0.0:
                acc = 0.0
                for i in range(o):
                    acc += delta[r, i] * w[i, j]
                out[r, j] = acc
            else:
                out[r, j] = 0.0
    return out


@njit(**_JIT)
def rmsprop_flat(p, g, m, v, lr, rho, kappa):
    n = p.shape[0]
    p2 = np.empty(n, dtype=np.float64)
    m2 = np.empty(n, dtype=np.float64)
    v2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        gi = g[i]
        mi = rho * m[i] + (1.0 - rho) * gi
        vi = rho * v[i] + (1.0 - rho) * gi * gi
        m2[i] = mi
        v2[i] = vi
        p2[i] = p[i] - lr * gi / np.sqrt(vi - mi * mi + kappa)
    return p2, m2, v2


@njit(**_JIT)
def spin(units: int) -> float:
    # One unit is one fused multiply-add; keeps a core busy for a
    # calibrated stretch without touching memory.
    acc = 1.0
    for _ in range(units):
        acc = acc * 1.0000000001 + 1e-12
    return acc
