"""Pure-numpy kernels, the fallback path when numba is unavailable or disabled.

Batched routines apply the single-row computation one row at a time, so a
batched result is bit-identical to the concatenation of its per-row results.
This property is load-bearing: the executor's lockstep batched inference must
match per-state inference exactly.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

_SPIN_A = np.full((24, 24), 1.0000001, dtype=np.float64)
_SPIN_B = np.full((24, 24), 0.9999999, dtype=np.float64)


def affine_rows(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], w.shape[0]), dtype=np.float64)
    for r in range(x.shape[0]):
        out[r] = w @ x[r] + b
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def output_delta(q: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    n = q.shape[0]
    delta = np.zeros_like(q)
    rows = np.arange(n)
    delta[rows, actions] = (q[rows, actions] - targets) / n
    return delta


def weight_grad(delta: np.ndarray, acts: np.ndarray) -> np.ndarray:
    return delta.T @ acts


def bias_grad(delta: np.ndarray) -> np.ndarray:
    return delta.sum(axis=0)


def hidden_delta(delta: np.ndarray, w: np.ndarray, pre: np.ndarray) -> np.ndarray:
    return (delta @ w) * (pre > 0.0)


def rmsprop_flat(p, g, m, v, lr, rho, kappa):
    m2 = rho * m + (1.0 - rho) * g
    v2 = rho * v + (1.0 - rho) * g * g
    p2 = p - lr * g / np.sqrt(v2 - m2 * m2 + kappa)
    return p2, m2, v2


def spin(units: int) -> float:
    # One unit is one small matrix product; the GIL is released inside dot.
    out = _SPIN_A
    for _ in range(units):
        out = _SPIN_A @ _SPIN_B
    return float(out[0, 0])
