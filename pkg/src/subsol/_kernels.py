"""Compiled inner loops for batched policy evaluation."""
import numpy as np
from numba import njit


@njit(cache=True)
def expected_active(base, offsets_t, floor, weights, slopes):
    """Noise-averaged value and active slope of a max of cuts, for every point.

    ``base[m, k]`` is cut k at the noise-free successor of point m and
    ``offsets_t[a, k]`` the shift of cut k under atom a.  Per atom the first
    maximal cut wins, and a floor strictly above every cut contributes its
    value with slope 0.  Returns ``(values[n], avg_slopes[n, d])``.

    A cut whose largest shift cannot reach the best smallest-shift value
    of the row is never maximal, so it is dropped before the atom loop.
    """
    n, K = base.shape
    A = offsets_t.shape[0]
    d = slopes.shape[1]
    values = np.zeros(n)
    avg = np.zeros((n, d))
    lo = np.empty(K)
    hi = np.empty(K)
    for k in range(K):
        lo[k] = offsets_t[0, k]
        hi[k] = offsets_t[0, k]
        for a in range(1, A):
            v = offsets_t[a, k]
            if v < lo[k]:
                lo[k] = v
            if v > hi[k]:
                hi[k] = v
    cand = np.empty(K, np.int64)
    for m in range(n):
        bound = -np.inf
        for k in range(K):
            v = base[m, k] + lo[k]
            if v > bound:
                bound = v
        nc = 0
        for k in range(K):
            if base[m, k] + hi[k] >= bound:
                cand[nc] = k
                nc += 1
        for a in range(A):
            best = -np.inf
            bi = -1
            for t in range(nc):
                k = cand[t]
                v = base[m, k] + offsets_t[a, k]
                if v > best:
                    best = v
                    bi = k
            if floor > best:
                values[m] += weights[a] * floor
                continue
            values[m] += weights[a] * best
            for i in range(d):
                avg[m, i] += weights[a] * slopes[bi, i]
    return values, avg
