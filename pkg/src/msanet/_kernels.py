"""Fused numba kernels for the batched augmented-Hamiltonian evaluation.

The activation tanh(A u + b) is evaluated outside (BLAS matmul plus numpy's
vectorized tanh are faster than scalar libm calls); these kernels consume the
precomputed activation and fuse the penalty terms and parameter gradients so
no (nodes x candidates x samples x d) temporaries are materialized.

Every output cell is accumulated by a fixed-order sample loop, so results do
not depend on thread counts or scheduling.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def aug_ham_from_phi(phi, A, p, v, q, rho):
    """Sample-averaged augmented Hamiltonian per (node, candidate).

    phi: (M, C, N, d) activation values; A: (M, C, d, d); p, v, q: (M, N, d).
    Returns (M, C).
    """
    M, C, N, d = phi.shape
    out = np.empty((M, C))
    w = np.empty(d)
    for m in range(M):
        for c in range(C):
            acc = 0.0
            for i in range(N):
                hterm = 0.0
                vpen = 0.0
                qpen = 0.0
                for j in range(d):
                    ph = phi[m, c, i, j]
                    s = 1.0 - ph * ph
                    w[j] = p[m, i, j] * s
                    hterm += p[m, i, j] * ph
                    dv = v[m, i, j] - ph
                    vpen += dv * dv
                for j in range(d):
                    r = q[m, i, j]
                    for k in range(d):
                        r += A[m, c, k, j] * w[k]
                    qpen += r * r
                acc += hterm - 0.5 * rho * (vpen + qpen)
            out[m, c] = acc / N
    return out


@njit(cache=True)
def aug_ham_grad_from_phi(phi, A, u, p, v, q, rho):
    """Gradient of the sample-averaged augmented Hamiltonian in (A, b).

    Returns (gA, gb) with shapes (M, C, d, d) and (M, C, d).  The objective
    itself is not returned; callers use `aug_ham_from_phi` so that all value
    comparisons share one accumulation path.
    """
    M, C, N, d = phi.shape
    gA = np.zeros((M, C, d, d))
    gb = np.zeros((M, C, d))
    w = np.empty(d)
    es = np.empty(d)
    r = np.empty(d)
    for m in range(M):
        for c in range(C):
            for i in range(N):
                for j in range(d):
                    ph = phi[m, c, i, j]
                    s = 1.0 - ph * ph
                    w[j] = p[m, i, j] * s
                    es[j] = (v[m, i, j] - ph) * s
                for j in range(d):
                    rj = q[m, i, j]
                    for k in range(d):
                        rj += A[m, c, k, j] * w[k]
                    r[j] = rj
                for j in range(d):
                    ph = phi[m, c, i, j]
                    ar = 0.0
                    for k in range(d):
                        ar += A[m, c, j, k] * r[k]
                    big_g = w[j] + rho * es[j] + 2.0 * rho * w[j] * ph * ar
                    gb[m, c, j] += big_g
                    for k in range(d):
                        gA[m, c, j, k] += big_g * u[m, i, k] - rho * w[j] * r[k]
    inv = 1.0 / N
    for m in range(M):
        for c in range(C):
            for j in range(d):
                gb[m, c, j] *= inv
                for k in range(d):
                    gA[m, c, j, k] *= inv
    return gA, gb
