# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel (hot loop of the Monte Carlo engine).

Same contract as ``_kernel_numpy.run_chunk``: factor-conditional transition
rows, conditional LGD, path-probability propagation and loss accumulation,
one path at a time. Thresholds of +/-inf flow through erfc as exact 0/1.
"""

from libc.math cimport erfc, sqrt
from libc.stdlib cimport free, malloc

cdef double INV_SQRT2 = 0.7071067811865475244008444


cdef inline double _phi(double x) noexcept nogil:
    return 0.5 * erfc(-x * INV_SQRT2)


def run_chunk(
    const double[:, :, ::1] factors,        # (n, T, d)
    const double[:, :, :, ::1] cutoffs,     # (G, T, K, K+1)
    const double[:, :, :, ::1] loadings,    # (G, K-1, T, d)
    const double[:, :, ::1] idio_scale,     # (G, K-1, T)
    const double[:, :, ::1] rec_mu,         # (G, K-1, T)
    const double[:, :, :, ::1] rec_sys,     # (G, K-1, T, d)
    const double[:, :, ::1] rec_scale,      # (G, K-1, T)
    const double[::1] renew_frac,           # (G,)
    const double[:, ::1] renew_profile,     # (G, K)
    const int[:, ::1] sub_counts,           # (G, K-1)
    const int[:, :, ::1] sub_index,         # (G, K-1, S)
    const double[:, :, :, ::1] sub_ead,     # (G, K-1, S, T)
    double[:, ::1] out_period,              # (n, T)
    double[:, ::1] out_sub,                 # (n, P)
    double[:, :, ::1] out_sub_period = None,  # optional (n, P, T)
):
    cdef Py_ssize_t n = factors.shape[0]
    cdef Py_ssize_t T = factors.shape[1]
    cdef Py_ssize_t d = factors.shape[2]
    cdef Py_ssize_t G = loadings.shape[0]
    cdef Py_ssize_t Km1 = loadings.shape[1]
    cdef Py_ssize_t K = Km1 + 1
    cdef bint per_period_subs = out_sub_period is not None

    cdef double *trans = <double *> malloc(K * K * sizeof(double))
    cdef double *prob = <double *> malloc(Km1 * K * sizeof(double))
    cdef double *nxt = <double *> malloc(Km1 * K * sizeof(double))
    cdef double *lgd = <double *> malloc(Km1 * sizeof(double))
    cdef double *edge = <double *> malloc((K + 1) * sizeof(double))
    if trans == NULL or prob == NULL or nxt == NULL or lgd == NULL or edge == NULL:
        free(trans); free(prob); free(nxt); free(lgd); free(edge)
        raise MemoryError()

    cdef Py_ssize_t k, g, t, i, j, col, s, f, p
    cdef double kappa, shift, rshift, scale, acc, unit, amount, contrib
    cdef double *tmp

    with nogil:
        for k in range(n):
            for g in range(G):
                kappa = renew_frac[g]
                for i in range(Km1):
                    for col in range(K):
                        prob[i * K + col] = 1.0 if i == col else 0.0
                for t in range(T):
                    # conditional transition rows for non-default ratings
                    for j in range(Km1):
                        shift = 0.0
                        rshift = 0.0
                        for f in range(d):
                            shift += loadings[g, j, t, f] * factors[k, t, f]
                            rshift += rec_sys[g, j, t, f] * factors[k, t, f]
                        scale = idio_scale[g, j, t]
                        for col in range(K + 1):
                            edge[col] = _phi((cutoffs[g, t, j, col] - shift) / scale)
                        for col in range(K):
                            trans[j * K + col] = edge[col] - edge[col + 1]
                        lgd[j] = 1.0 - _phi((rec_mu[g, j, t] + rshift) / rec_scale[g, j, t])
                    for col in range(K):
                        trans[Km1 * K + col] = 0.0
                    trans[Km1 * K + K - 1] = 1.0
                    if kappa > 0.0:
                        for j in range(K):
                            for col in range(K):
                                trans[j * K + col] = (1.0 - kappa) * trans[j * K + col] \
                                    + kappa * renew_profile[g, col]

                    # losses: default column weighted by conditional LGD and exposure
                    for i in range(Km1):
                        unit = 0.0
                        for j in range(Km1):
                            unit += prob[i * K + j] * trans[j * K + K - 1] * lgd[j]
                        for s in range(sub_counts[g, i]):
                            amount = sub_ead[g, i, s, t]
                            if amount == 0.0:
                                continue
                            p = sub_index[g, i, s]
                            contrib = unit * amount
                            out_period[k, t] += contrib
                            out_sub[k, p] += contrib
                            if per_period_subs:
                                out_sub_period[k, p, t] += contrib

                    if t + 1 < T:
                        for i in range(Km1):
                            for col in range(K):
                                acc = 0.0
                                for j in range(K):
                                    acc += prob[i * K + j] * trans[j * K + col]
                                nxt[i * K + col] = acc
                        tmp = prob
                        prob = nxt
                        nxt = tmp

    free(trans); free(prob); free(nxt); free(lgd); free(edge)
