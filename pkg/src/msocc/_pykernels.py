"""Pure numpy per-site likelihood kernel.

Each site ``i`` is summarised by its number of surveyed occasions ``n_i``
and the per-species detection counts ``d_is``. Under latent state ``z``
the site's log-probability is::

    log psi[z] + sum_{s: z_s = 1} [d_is log p_s + (n_i - d_is) log(1 - p_s)]

and is ``-inf`` whenever a detected species is absent from ``z``. The site
log-likelihood is the log-sum-exp of those terms over all ``2**S`` states.
"""
from __future__ import annotations

import numpy as np
from scipy.special import log_expit, logsumexp


def state_matrix(S: int) -> np.ndarray:
    """(2**S, S) 0/1 matrix; row z holds the bits of z, species 0 least significant."""
    z = np.arange(2**S)[:, None]
    return ((z >> np.arange(S)) & 1).astype(np.int8)


def loglik_grad(log_psi, eta, det, nocc, want_grad=True):
    """Total log-likelihood and its sufficient gradient pieces.

    Returns
    -------
    ll : float
        Sum over sites of the marginal log-likelihood.
    state_post : ndarray (2**S,)
        Posterior latent-state probabilities summed over sites.
    score : ndarray (S,)
        Derivative of ``ll`` w.r.t. ``logit(p_s)``:
        ``sum_i Pr(z_s = 1 | y_i) * (d_is - n_i p_s)``.
    """
    log_psi = np.asarray(log_psi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    det = np.asarray(det)
    nocc = np.asarray(nocc)
    S = eta.shape[0]
    Z = state_matrix(S)

    logp, logq = log_expit(eta), log_expit(-eta)
    A = det * logp + (nocc[:, None] - det) * logq            # (I, S)
    lt = A @ Z.T + log_psi                                    # (I, 2**S)
    detected = det > 0
    # infeasible when a detected species is absent from z
    infeasible = detected.astype(np.int64) @ (1 - Z.T) > 0
    lt[infeasible] = -np.inf
    lse = logsumexp(lt, axis=1)
    ll = float(lse.sum())
    if not want_grad:
        return ll, np.zeros(2**S), np.zeros(S)
    w = np.exp(lt - lse[:, None])
    state_post = w.sum(axis=0)
    m = w @ Z                                                 # (I, S)
    score = (m * (det - nocc[:, None] * np.exp(logp))).sum(axis=0)
    return ll, state_post, score
