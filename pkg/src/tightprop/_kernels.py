"""Compiled min/max reductions for scalar-output two-layer networks.

Both kernels evaluate ``a2 . relu(z)`` for many pre-activation vectors
without materializing the ReLU output, and fold the results into running
``(lo, hi)`` extrema. Summation order is fixed by the compiled loop, so
results are reproducible run to run on one machine.
"""

import numba
import numpy as np


@numba.njit(fastmath=True, cache=True)
def relu_dot_minmax(Z, c, a2, lo, hi):
    """Extrema of ``a2 . relu(Z[r] + c)`` over rows ``r``."""
    m, k = Z.shape
    for r in range(m):
        s = 0.0
        for i in range(k):
            s += a2[i] * max(Z[r, i] + c[i], 0.0)
        lo = min(lo, s)
        hi = max(hi, s)
    return lo, hi


@numba.njit(fastmath=True, cache=True)
def corner_minmax(P_hi, P_lo, c, a2, lo, hi):
    """Extrema of ``a2 . relu(c + P_hi[h] + P_lo[b])`` over all pairs ``(h, b)``.

    Splitting the corner sign vector into a high and a low half turns the
    2**n corners into a product of two small tables of partial sums.
    """
    H = P_hi.shape[0]
    B, k = P_lo.shape
    base = np.empty(k)
    for h in range(H):
        for i in range(k):
            base[i] = c[i] + P_hi[h, i]
        for b in range(B):
            s = 0.0
            for i in range(k):
                s += a2[i] * max(base[i] + P_lo[b, i], 0.0)
            lo = min(lo, s)
            hi = max(hi, s)
    return lo, hi
