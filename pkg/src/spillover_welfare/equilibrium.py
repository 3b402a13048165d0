"""Village take-up fixed points under baseline and subsidy scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SolverError
from .model import ErrorDist, IndexParams, PolicyScenario, Village, linear_index

__all__ = [
    "FixedPointResult",
    "UniquenessReport",
    "contraction_bound",
    "contraction_holds",
    "fixed_point_iterate",
    "bisect_fixed_point",
    "take_up_map",
    "solve_pi_baseline",
    "solve_pi_policy",
    "solve_pi_prices",
    "uniqueness_scan",
]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
BISECTION_ITER = 200


@dataclass(frozen=True)
class FixedPointResult:
    value: float
    residual: float
    iterations: int
    converged: bool
    method: str = "iteration"


@dataclass(frozen=True)
class UniquenessReport:
    roots: tuple
    objective_grid: tuple = field(repr=False)

    @property
    def unique(self) -> bool:
        return len(self.roots) == 1


def contraction_bound(error: ErrorDist) -> float:
    """Largest |alpha| for which the take-up map is a contraction: 1 / sup f."""
    return 4.0 if ErrorDist.parse(error).kind == "logit" else math.sqrt(2.0 * math.pi)


def contraction_holds(alpha: float, error: ErrorDist) -> bool:
    return abs(alpha) * ErrorDist.parse(error).sup_density < 1.0


def _bisect_root(g, lo, hi, g_lo, g_hi, n_iter):
    """Bisection for a sign change of g on [lo, hi]; returns (x, g(x), iterations)."""
    best, best_g = (lo, g_lo) if abs(g_lo) <= abs(g_hi) else (hi, g_hi)
    it = 0
    for it in range(1, n_iter + 1):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < abs(best_g):
            best, best_g = mid, gm
        if gm == 0 or hi - lo < 1e-16:
            break
        if (gm < 0) == (g_lo < 0):
            lo, g_lo = mid, gm
        else:
            hi = mid
    return best, best_g, it


def bisect_fixed_point(fmap: Callable[[float], float], lo=0.0, hi=1.0,
                       n_iter=BISECTION_ITER, tol=DEFAULT_TOL) -> FixedPointResult:
    """Bisection on g(x) = x - fmap(x) over a bracket with a sign change."""
    g = lambda x: x - fmap(x)  # noqa: E731
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0:
        return FixedPointResult(lo, 0.0, 0, True, "bisection")
    if g_hi == 0:
        return FixedPointResult(hi, 0.0, 0, True, "bisection")
    if g_lo * g_hi > 0:
        raise SolverError(f"no sign change of x - map(x) on [{lo}, {hi}]",
                          last_value=min(abs(g_lo), abs(g_hi)))
    x, r, it = _bisect_root(g, lo, hi, g_lo, g_hi, n_iter)
    return FixedPointResult(x, r, it, abs(r) < tol, "bisection")


def fixed_point_iterate(fmap: Callable[[float], float], init: float = 0.5,
                        tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                        damping: float = 1.0) -> FixedPointResult:
    """Damped iteration x <- (1-d) x + d map(x), with a bisection fallback on [0, 1].

    The fallback triggers when the residual fails to improve for 50 straight
    iterations or the iteration budget runs out.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    x = float(init)
    best = math.inf
    stall = 0
    for it in range(1, max_iter + 1):
        fx = fmap(x)
        r = x - fx
        if abs(r) < tol:
            return FixedPointResult(x, r, it - 1, True)
        if abs(r) < best:
            best, stall = abs(r), 0
        else:
            stall += 1
            if stall >= 50:
                break
        x = (1.0 - damping) * x + damping * fx
    res = bisect_fixed_point(fmap, tol=tol)
    if not res.converged:
        raise SolverError(
            f"fixed point not found: last residual {res.residual:.3e}", last_value=res.residual)
    return res


def take_up_map(village: Village, params: IndexParams, prices) -> Callable[[float], float]:
    """pi -> average choice probability over the village's participants at the given prices."""
    v = village.participants()
    prices = np.broadcast_to(np.asarray(prices, float), village.price.shape)[village.participant]
    base = linear_index(params, prices, v.wealth, v.covariates, params.intercept_for(village.id))
    cdf = params.error.cdf
    alpha = params.alpha

    def fmap(pi):
        return float(np.mean(cdf(base + alpha * pi)))

    return fmap


def solve_pi_prices(village: Village, params: IndexParams, prices, *, init=None,
                    tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=1.0) -> FixedPointResult:
    fmap = take_up_map(village, params, prices)
    if params.alpha == 0.0:
        val = fmap(0.0)
        return FixedPointResult(val, 0.0, 0, True, "explicit")
    return fixed_point_iterate(fmap, 0.5 if init is None else init, tol, max_iter, damping)


def solve_pi_baseline(village: Village, params: IndexParams, p0: float, **kw) -> FixedPointResult:
    return solve_pi_prices(village, params, np.full(village.n_rows, float(p0)), **kw)


def solve_pi_policy(village: Village, params: IndexParams, scenario: PolicyScenario,
                    **kw) -> FixedPointResult:
    return solve_pi_prices(village, params, scenario.prices(village.wealth), **kw)


def uniqueness_scan(village: Village, params: IndexParams, scenario_or_baseline,
                    grid_size: int = 1001, tol: float = 1e-10) -> UniquenessReport:
    """Scan pi - map(pi) on a uniform grid over [0, 1] and polish every sign change.

    ``scenario_or_baseline`` is a PolicyScenario or a scalar baseline price.
    """
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    if isinstance(scenario_or_baseline, PolicyScenario):
        prices = scenario_or_baseline.prices(village.wealth)
    else:
        prices = np.full(village.n_rows, float(scenario_or_baseline))
    fmap = take_up_map(village, params, prices)
    grid = np.linspace(0.0, 1.0, grid_size)
    g = np.array([x - fmap(x) for x in grid])
    roots = []
    for i in range(grid_size):
        if g[i] == 0.0:
            roots.append(float(grid[i]))
        elif i + 1 < grid_size and g[i] * g[i + 1] < 0:
            lo, hi = grid[i], grid[i + 1]
            res = bisect_fixed_point(fmap, lo, hi, tol=tol)
            roots.append(float(res.value))
    roots = [r for r in roots if abs(r - fmap(r)) < tol]
    return UniquenessReport(tuple(sorted(roots)),
                            tuple(zip(grid.tolist(), (g * g).tolist())))

