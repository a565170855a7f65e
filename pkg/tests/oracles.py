"""Independent reference computations used by the tests.

These deliberately avoid the package's log-space and vectorised paths.
"""
import itertools
import math

import numpy as np

MISSING = -1


def brute_force_nll(psi, p, y):
    """Naive product-form NLL: enumerate latent states per site, multiply cells."""
    S, I, T = y.shape
    total = 0.0
    for i in range(I):
        lik = 0.0
        for z in itertools.product((0, 1), repeat=S):
            state = sum(bit << s for s, bit in enumerate(z))
            term = psi[state]
            for s in range(S):
                for t in range(T):
                    v = y[s, i, t]
                    if v == MISSING:
                        continue
                    q = z[s] * p[s]
                    term *= q if v == 1 else (1.0 - q)
            lik += term
        total -= math.log(lik)
    return total


def central_difference(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def enumerate_marginal(psi, S, species):
    return sum(psi[z] for z in range(2**S) if (z >> species) & 1)


def enumerate_conditional(psi, S, target, given, state):
    num = sum(psi[z] for z in range(2**S) if (z >> target) & 1 and ((z >> given) & 1) == state)
    den = sum(psi[z] for z in range(2**S) if ((z >> given) & 1) == state)
    return num / den
