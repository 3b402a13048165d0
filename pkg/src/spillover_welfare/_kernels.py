"""Compiled inner loops for the conditional-belief operator."""

import math
import os

import numpy as np

# the TBB layer shipped with some numba wheels is too old and only warns
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
from numba import njit, prange  # noqa: E402

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
# Below RHO_EXPAND the conditional probability is replaced by its Mehler
# (Hermite) series in rho truncated after ORDER terms; the truncation error
# is below 1e-10 over the whole shock grid.
RHO_EXPAND = 0.15
ORDER = 14
RHO_FIRST = 1e-6
RHO_ONE = 1.0 - 1e-15


@njit(cache=True)
def ncdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True)
def hermite_table(x, order):
    """Probabilists' Hermite polynomials He_0..He_order at each x."""
    n = x.shape[0]
    out = np.empty((n, order + 1))
    for i in range(n):
        out[i, 0] = 1.0
        if order >= 1:
            out[i, 1] = x[i]
        for k in range(1, order):
            out[i, k + 1] = x[i] * out[i, k] - k * out[i, k - 1]
    return out


@njit(cache=True)
def crossing(b, alpha, psi_row, e_grid):
    """Root of e -> b + alpha psi(e) + e for psi piecewise linear on e_grid, flat outside."""
    G = e_grid.shape[0]
    if b + alpha * psi_row[0] + e_grid[0] >= 0.0:
        return -b - alpha * psi_row[0]
    if b + alpha * psi_row[G - 1] + e_grid[G - 1] < 0.0:
        return -b - alpha * psi_row[G - 1]
    lo = 0
    hi = G - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if b + alpha * psi_row[mid] + e_grid[mid] < 0.0:
            lo = mid
        else:
            hi = mid
    g0 = b + alpha * psi_row[lo] + e_grid[lo]
    g1 = b + alpha * psi_row[hi] + e_grid[hi]
    return e_grid[lo] - g0 / (g1 - g0) * (e_grid[hi] - e_grid[lo])


@njit(cache=True)
def crossings(psi, base, alpha, e_grid):
    n = psi.shape[0]
    x = np.empty(n)
    for k in range(n):
        x[k] = crossing(base[k], alpha, psi[k], e_grid)
    return x


@njit(parallel=True, cache=True)
def belief_sweep(psi, base, alpha, e_grid, rho, out):
    """One application of the belief operator; writes into ``out``.

    out[h, i] = mean_k Pr(household k buys | own shock of h equals e_i),
    where k buys iff its shock exceeds its crossing point.  The pair (h, h)
    is treated as uncorrelated.
    """
    n, G = psi.shape
    x = crossings(psi, base, alpha, e_grid)
    m = np.empty(n)
    # coef[k, j] = phi(x_k) He_{j-1}(x_k) / j!  for j = 1..ORDER
    hx = hermite_table(x, ORDER)
    coef = np.zeros((n, ORDER + 1))
    for k in range(n):
        m[k] = ncdf(-x[k])
        dens = math.exp(-0.5 * x[k] * x[k]) / SQRT2PI
        fact = 1.0
        for j in range(1, ORDER + 1):
            fact *= j
            coef[k, j] = dens * hx[k, j - 1] / fact
    he = hermite_table(e_grid, ORDER)
    for h in prange(n):
        s = np.zeros(ORDER + 1)
        for i in range(G):
            out[h, i] = 0.0
        for k in range(n):
            r = rho[h, k] if k != h else 0.0
            if r < RHO_FIRST:
                # higher-order terms are below 1e-12
                s[0] += m[k]
                s[1] += r * coef[k, 1]
            elif r < RHO_EXPAND:
                s[0] += m[k]
                rj = 1.0
                for j in range(1, ORDER + 1):
                    rj *= r
                    s[j] += rj * coef[k, j]
            elif r >= RHO_ONE:
                for i in range(G):
                    if e_grid[i] >= x[k]:
                        out[h, i] += 1.0
            else:
                inv = 1.0 / math.sqrt(1.0 - r * r)
                xk = x[k]
                for i in range(G):
                    out[h, i] += ncdf((r * e_grid[i] - xk) * inv)
        for i in range(G):
            v = out[h, i] + s[0]
            for j in range(1, ORDER + 1):
                v += s[j] * he[i, j]
            out[h, i] = min(1.0, max(0.0, v / n))
    return x
