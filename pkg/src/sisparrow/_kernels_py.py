"""Pure-numpy implementations of the per-class inner-loop kernels.

Used when the compiled extension is unavailable (or forced via the
``SISPARROW_KERNELS=python`` environment variable).  Semantics match
``_kernels_cy`` exactly; see that module for the index conventions.
"""

import numpy as np


def class_sums(X, ptr, rows, cols):
    """Per-class sums of ``X[rows, cols]`` split at ``ptr``."""
    return np.add.reduceat(X[rows, cols], ptr[:-1])


def class_quadratic(V, Rt, ptr, rows, cols):
    """Per-class curvature sums.

    For class ``i`` with positions ``(r_k, c_k)`` this is

        sum_{k,l} V[r_k, r_l] Rt[c_l, c_k] + V[c_k, c_l] Rt[r_l, r_k],

    the trace form ``tr(Rt (O^T V O + O V O^T))`` expanded over the sparse
    indicator ``O`` of the class.
    """
    n = len(ptr) - 1
    out = np.empty(n, dtype=float)
    RtT = Rt.T
    for i in range(n):
        r = rows[ptr[i]:ptr[i + 1]]
        c = cols[ptr[i]:ptr[i + 1]]
        t = np.sum(V[np.ix_(r, r)] * RtT[np.ix_(c, c)])
        t += np.sum(V[np.ix_(c, c)] * RtT[np.ix_(r, r)])
        out[i] = t.real
    return out
