"""Compiled inner loops for SGD epochs and the one-sided Jacobi SVD.

All kernels release the GIL so that several threads can run epochs over
disjoint slices of the visit order against the same factor arrays.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sgd_epoch(Q, P, rows, cols, vals, order, start, stop, eta, lam):
    r = Q.shape[1]
    for t in range(start, stop):
        idx = order[t]
        u = rows[idx]
        i = cols[idx]
        err = vals[idx]
        for f in range(r):
            err -= Q[u, f] * P[i, f]
        # both updates read the pre-update components
        for f in range(r):
            qf = Q[u, f]
            pf = P[i, f]
            Q[u, f] = qf + eta * (2.0 * err * pf - lam * qf)
            P[i, f] = pf + eta * (2.0 * err * qf - lam * pf)
    return stop - start


@njit(cache=True, nogil=True)
def sum_sq_error(Q, P, rows, cols, vals):
    r = Q.shape[1]
    total = 0.0
    for t in range(rows.shape[0]):
        u = rows[t]
        i = cols[t]
        err = vals[t]
        for f in range(r):
            err -= Q[u, f] * P[i, f]
        total += err * err
    return total


@njit(cache=True, nogil=True)
def jacobi_sweeps(A, V, tol, max_sweeps):
    """Hestenes one-sided Jacobi: orthogonalize the columns of A in place.

    Returns the number of sweeps used, or -1 if ``max_sweeps`` was exhausted.
    """
    m, n = A.shape
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += A[k, i] * A[k, i]
                    beta += A[k, j] * A[k, j]
                    gamma += A[k, i] * A[k, j]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    aki = A[k, i]
                    akj = A[k, j]
                    A[k, i] = c * aki - s * akj
                    A[k, j] = s * aki + c * akj
                for k in range(n):
                    vki = V[k, i]
                    vkj = V[k, j]
                    V[k, i] = c * vki - s * vkj
                    V[k, j] = s * vki + c * vkj
        if not rotated:
            return sweep
    return -1
