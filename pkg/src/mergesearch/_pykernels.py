"""Pure-numpy merge kernels.

Reference implementation of the accumulation kernels in ``_ckernels.pyx``.
Both backends must agree bit-for-bit: every element is accumulated as a
double-double (hi, lo) pair using the TwoSum error-free transformation,
in ascending checkpoint order, and rounded to float32 once at the end.
"""
import numpy as np


def dd_start(src, alpha):
    hi = np.float64(alpha) * src.astype(np.float64)
    lo = np.zeros_like(hi)
    return hi, lo


def dd_add(hi, lo, src, alpha):
    p = np.float64(alpha) * src.astype(np.float64)
    s = hi + p
    bb = s - hi
    err = (hi - (s - bb)) + (p - bb)
    hi[...] = s
    lo += err


def dd_finish(hi, lo):
    # lo == 0 keeps hi as-is so a single contribution of -0.0 survives
    return np.where(lo == 0.0, hi, hi + lo).astype(np.float32)


def batch_merge(weights, thetas):
    """Merge every row of ``weights`` (G, N) against ``thetas`` (N, P)."""
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    thetas = np.ascontiguousarray(thetas, dtype=np.float32)
    g, n = weights.shape
    p = thetas.shape[1]
    hi = np.zeros((g, p))
    lo = np.zeros((g, p))
    started = np.zeros(g, dtype=bool)
    for i in range(n):
        alpha = weights[:, i]
        active = alpha != 0.0
        if not active.any():
            continue
        prod = alpha[:, None] * thetas[i].astype(np.float64)[None, :]
        fresh = active & ~started
        grow = active & started
        if fresh.any():
            hi[fresh] = prod[fresh]
        if grow.any():
            h = hi[grow]
            q = prod[grow]
            s = h + q
            bb = s - h
            lo[grow] += (h - (s - bb)) + (q - bb)
            hi[grow] = s
        started |= active
    return dd_finish(hi, lo)
