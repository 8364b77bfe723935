"""Compiled inner loops.

Every kernel parallelizes over output nodes only; each output is a min/max or
a fixed-order sum computed by a single thread, so results do not depend on
the number of threads.  Dot products are written out over the (small)
dimension instead of calling BLAS.
"""
import os

import numpy as np
from numba import config, njit, prange

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def configure_threads(env_var: str = "TORICENV_THREADS") -> int:
    """Set the kernel thread count from ``env_var`` (default: all available); returns it."""
    import numba

    raw = os.environ.get(env_var, "").strip()
    top = numba.config.NUMBA_NUM_THREADS
    count = top if not raw else int(raw)
    if not 1 <= count <= top:
        raise ValueError(f"{env_var}={raw!r} must be between 1 and {top}")
    numba.set_num_threads(count)
    return count


@njit(parallel=True, cache=True)
def infconv_support(X, f, V, targets):
    """min_k f[k] + max_v <V[v], X[i] - X[k]> for each i in ``targets``."""
    N, n = X.shape
    nv = V.shape[0]
    PX = np.empty((N, nv))
    for k in prange(N):
        for v in range(nv):
            acc = 0.0
            for d in range(n):
                acc += V[v, d] * X[k, d]
            PX[k, v] = acc
    out = np.empty(targets.shape[0])
    for t in prange(targets.shape[0]):
        i = targets[t]
        best = np.inf
        for k in range(N):
            fk = f[k]
            if fk == -np.inf:
                continue
            h = -np.inf
            for v in range(nv):
                val = PX[i, v] - PX[k, v]
                if val > h:
                    h = val
            val = fk + h
            if val < best:
                best = val
        out[t] = best
    return out


@njit(parallel=True, cache=True)
def max_affine(X, slopes, offsets):
    """max_j <slopes[j], X[i]> + offsets[j] for every row of X."""
    N, n = X.shape
    M = slopes.shape[0]
    out = np.empty(N)
    for i in prange(N):
        best = -np.inf
        for j in range(M):
            acc = offsets[j]
            for d in range(n):
                acc += slopes[j, d] * X[i, d]
            if acc > best:
                best = acc
        out[i] = best
    return out


@njit(parallel=True, cache=True)
def touching_ranges(X, f, grads, icpt, targets, tol):
    """Coordinatewise min/max of the gradients of planes touching (X[i], f[i]).

    A plane ``<g, x> + c`` touches node i when its value there is within
    ``tol`` of f[i].  Rows with no touching plane are left at +inf / -inf.
    """
    n = X.shape[1]
    F = grads.shape[0]
    T = targets.shape[0]
    gmin = np.full((T, n), np.inf)
    gmax = np.full((T, n), -np.inf)
    best = np.full(T, -np.inf)
    for t in prange(T):
        i = targets[t]
        for j in range(F):
            acc = icpt[j]
            for d in range(n):
                acc += grads[j, d] * X[i, d]
            if acc > best[t]:
                best[t] = acc
            if acc >= f[i] - tol:
                for d in range(n):
                    g = grads[j, d]
                    if g < gmin[t, d]:
                        gmin[t, d] = g
                    if g > gmax[t, d]:
                        gmax[t, d] = g
    return gmin, gmax, best


@njit(parallel=True, cache=True)
def conjugate_direct(A, X, f):
    """max_i <A[a], X[i]> - f[i] over finite f, for each dual point A[a]."""
    Na, n = A.shape
    N = X.shape[0]
    out = np.empty(Na)
    for a in prange(Na):
        best = -np.inf
        for i in range(N):
            fi = f[i]
            if fi == -np.inf or fi == np.inf:
                continue
            acc = -fi
            for d in range(n):
                acc += A[a, d] * X[i, d]
            if acc > best:
                best = acc
        out[a] = best
    return out


@njit(cache=True)
def llt_1d(x, f, s):
    """Linear-time discrete Legendre transform max_i s_j x_i - f_i.

    ``x`` and ``s`` must be increasing.  The lower convex hull of the points
    (x_i, f_i) is built by a monotone chain, then slopes are merged against
    the hull edges.
    """
    N = x.shape[0]
    hull = np.empty(N, np.int64)
    m = 0
    for i in range(N):
        if f[i] == np.inf or f[i] == -np.inf:
            continue
        while m >= 2:
            a = hull[m - 2]
            b = hull[m - 1]
            # drop b when it lies on or above segment a-i
            if (f[b] - f[a]) * (x[i] - x[a]) >= (f[i] - f[a]) * (x[b] - x[a]):
                m -= 1
            else:
                break
        hull[m] = i
        m += 1
    out = np.empty(s.shape[0])
    if m == 0:
        out[:] = -np.inf
        return out
    k = 0
    for j in range(s.shape[0]):
        while k < m - 1:
            a = hull[k]
            b = hull[k + 1]
            if s[j] * x[b] - f[b] >= s[j] * x[a] - f[a]:
                k += 1
            else:
                break
        i = hull[k]
        out[j] = s[j] * x[i] - f[i]
    return out
