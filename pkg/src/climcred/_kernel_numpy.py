"""Pure-numpy simulation kernel (fallback backend).

Evaluates the factor-conditional portfolio loss path by path, vectorized
across a chunk of paths. The compiled backend in ``_kernel.pyx`` implements
the same contract with the same summation order; both accumulate losses per
period and per sub-portfolio (and optionally per sub-portfolio and period).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr


def run_chunk(
    factors,  # (n, T, d) factor draws
    cutoffs,  # (G, T, K, K+1) thresholds with a -inf sentinel column
    loadings,  # (G, K-1, T, d)
    idio_scale,  # (G, K-1, T) sqrt(1 - a.C.a)
    rec_mu,  # (G, K-1, T)
    rec_sys,  # (G, K-1, T, d) sigma * b
    rec_scale,  # (G, K-1, T) sqrt(1 + sigma^2 (1 - b.C.b))
    renew_frac,  # (G,)
    renew_profile,  # (G, K)
    sub_counts,  # (G, K-1) int32
    sub_index,  # (G, K-1, S) int32
    sub_ead,  # (G, K-1, S, T)
    out_period,  # (n, T) += losses by period
    out_sub,  # (n, P) += total losses by sub-portfolio
    out_sub_period=None,  # optional (n, P, T)
):
    n, T, d = factors.shape
    G, Km1 = loadings.shape[0], loadings.shape[1]
    K = Km1 + 1

    eye = np.zeros((Km1, K))
    eye[np.arange(Km1), np.arange(Km1)] = 1.0

    for g in range(G):
        kappa = renew_frac[g]
        reissue = renew_profile[g]
        prob = np.broadcast_to(eye, (n, Km1, K)).copy()  # P(rating at t-1 | initial)
        for t in range(T):
            shift = factors[:, t, :] @ loadings[g, :, t, :].T  # (n, Km1)
            args = (cutoffs[g, t, :Km1, :][None, :, :] - shift[:, :, None]) / idio_scale[g, :, t][None, :, None]
            u = ndtr(args)  # (n, Km1, K+1)
            trans = np.empty((n, K, K))
            trans[:, :Km1, :] = u[:, :, :-1] - u[:, :, 1:]
            trans[:, Km1, :] = 0.0
            trans[:, Km1, K - 1] = 1.0
            if kappa > 0.0:
                trans *= 1.0 - kappa
                trans += kappa * reissue[None, None, :]

            lgd = 1.0 - ndtr(
                (rec_mu[g, :, t][None, :] + factors[:, t, :] @ rec_sys[g, :, t, :].T)
                / rec_scale[g, :, t][None, :]
            )  # (n, Km1)
            weighted = trans[:, :Km1, K - 1] * lgd  # default prob x LGD per rating at t-1
            unit_loss = np.einsum("nij,nj->ni", prob[:, :, :Km1], weighted)  # per initial rating

            for i in range(Km1):
                for s in range(sub_counts[g, i]):
                    amount = sub_ead[g, i, s, t]
                    if amount == 0.0:
                        continue
                    p = sub_index[g, i, s]
                    contrib = unit_loss[:, i] * amount
                    out_period[:, t] += contrib
                    out_sub[:, p] += contrib
                    if out_sub_period is not None:
                        out_sub_period[:, p, t] += contrib

            if t + 1 < T:
                prob = np.einsum("nij,njk->nik", prob, trans)
