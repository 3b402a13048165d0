"""Independent reference computations used by the tests.

Nothing here calls the closed-form welfare code: the CV oracle works with
the utilities directly, draws the taste shock and solves the indifference
condition for S household by household.
"""

from __future__ import annotations

import numpy as np
from scipy import special


def draw_nu(kind, rng, n):
    """nu = -(eta1 - eta0): buy iff index >= nu, so nu has CDF F."""
    return rng.logistic(size=n) if kind == "logit" else rng.standard_normal(n)


def simulate_cv(kind, intercept, c1, c2, alpha1, alpha0, y, p0, p_post, pi0, pi1,
                n_draws=1_000_000, seed=0):
    """Per-draw compensating variation S solving max post utility(S) = max pre utility.

    S is income handed to the household after the policy (S < 0 is a gain).
    Utilities (option 0 normalised to delta0 = eta0 = 0):
        buy:      d1 + beta1 (y + S - p) + alpha1 pi - nu
        not buy:  beta0 (y + S) + alpha0 pi
    with beta1 = -c1 and beta0 = -c1 - c2.  Returns (mean, standard error).
    """
    rng = np.random.default_rng(seed)
    nu = draw_nu(kind, rng, n_draws)
    beta1, beta0 = -c1, -c1 - c2
    pre = np.maximum(intercept + beta1 * (y - p0) + alpha1 * pi0 - nu,
                     beta0 * y + alpha0 * pi0)

    def post(s):
        return np.maximum(intercept + beta1 * (y + s - p_post) + alpha1 * pi1 - nu,
                          beta0 * (y + s) + alpha0 * pi1)

    lo = np.full(n_draws, -1.0)
    hi = np.full(n_draws, 1.0)
    # widen until post(lo) <= pre <= post(hi) everywhere (post is increasing in s)
    while True:
        bad = post(lo) > pre
        if not bad.any():
            break
        lo[bad] *= 2.0
    while True:
        bad = post(hi) < pre
        if not bad.any():
            break
        hi[bad] *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = post(mid) < pre
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    s = 0.5 * (lo + hi)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(n_draws))


def logistic(x):
    return special.expit(x)


def bisection_root(g, lo, hi, n_iter=200):
    """Plain bisection for g(x) = 0 with g(lo) <= 0 <= g(hi)."""
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
