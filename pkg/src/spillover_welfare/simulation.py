"""Synthetic village populations and IID-shock equilibrium outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import contraction_holds, fixed_point_iterate
from .errors import InputError
from .model import Dataset, IndexParams, Village, linear_index

__all__ = [
    "PRICE_MENU",
    "COVARIATE_NAMES",
    "VillageDesign",
    "PopulationConfig",
    "standard_population",
    "draw_population",
    "simulate_iid",
    "rng_for",
]

# 22 final prices between 0 and 300 KSh
PRICE_MENU = tuple(float(p) for p in np.round(np.linspace(0.0, 300.0, 22)))
COVARIATE_NAMES = ("children", "female_edu")


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Independent generator for (seed, stream...) via SeedSequence spawning keys."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


@dataclass(frozen=True)
class VillageDesign:
    id: int
    n_households: int
    xi_bar: float
    prices: tuple = PRICE_MENU
    total_households: int | None = None


@dataclass(frozen=True)
class PopulationConfig:
    """Household characteristics shared by all villages.

    Wealth is log-normal and rounded to whole KSh; the defaults put about
    27% of households at or below 8000 KSh.
    """

    villages: tuple
    wealth_median: float = 15000.0
    wealth_log_sd: float = 1.026
    children_prob: float = 0.6
    edu_years: int = 12

    def __post_init__(self):
        object.__setattr__(self, "villages", tuple(self.villages))
        ids = [v.id for v in self.villages]
        if len(set(ids)) != len(ids):
            raise InputError("village ids must be unique")


def standard_population(n_villages: int = 11, n_households: int = 2000,
                        xi_bars=None) -> PopulationConfig:
    """Villages with staggered price windows so that take-up differs across villages.

    Villages 1 and ``n_villages`` share the same intercept and face the most
    and least expensive price windows respectively.
    """
    menu = np.array(PRICE_MENU)
    designs = []
    for i in range(n_villages):
        frac = i / max(1, n_villages - 1)
        # window of 8 consecutive menu prices sliding from expensive to cheap
        start = int(round((1.0 - frac) * (len(menu) - 8)))
        prices = tuple(menu[start:start + 8])
        xi = 0.5 + 0.3 * math.sin(1.7 * i) if xi_bars is None else xi_bars[i]
        designs.append(VillageDesign(i + 1, n_households, float(xi), prices))
    if xi_bars is None:
        designs[-1] = VillageDesign(n_villages, n_households, designs[0].xi_bar, designs[-1].prices)
    return PopulationConfig(tuple(designs))


def draw_population(config: PopulationConfig, seed: int, first_household_id: int = 1):
    """Draw prices, wealth and covariates; returns a list of outcome-free Villages."""
    villages = []
    hid = first_household_id
    for k, d in enumerate(config.villages):
        rng = rng_for(seed, 0, k)
        n = d.n_households
        price = rng.choice(np.asarray(d.prices, float), size=n)
        wealth = np.round(config.wealth_median * np.exp(config.wealth_log_sd * rng.standard_normal(n)))
        children = (rng.random(n) < config.children_prob).astype(float)
        edu = rng.binomial(config.edu_years, 0.5, size=n).astype(float)
        total = d.total_households if d.total_households is not None else n
        villages.append(Village(d.id, np.arange(hid, hid + n), price, wealth,
                                np.column_stack([children, edu]), None, None, None,
                                total, d.xi_bar))
        hid += n
    return villages


def simulate_iid(config: PopulationConfig, params: IndexParams, seed: int) -> Dataset:
    """Outcomes with IID taste shocks: every household holds the village equilibrium belief.

    The belief is the take-up fixed point over the village's own sample of
    households.  Intercepts come from ``params`` when it carries village
    intercepts, otherwise from each design's ``xi_bar`` added to the common
    intercept.
    """
    if not contraction_holds(params.alpha, params.error):
        raise InputError("alpha violates the contraction condition")
    out = []
    for k, v in enumerate(draw_population(config, seed)):
        c = _intercept(params, v)
        base = linear_index(params, v.price, v.wealth, v.covariates, c)
        pi_bar = fixed_point_iterate(lambda p: float(np.mean(params.error.cdf(base + params.alpha * p)))).value
        eps = params.error.sample(rng_for(seed, 1, k), v.n_rows)
        a = (base + params.alpha * pi_bar + eps >= 0).astype(np.int8)
        out.append(v.replace(outcome=a, xi_bar=c))
    return Dataset(tuple(out), COVARIATE_NAMES)


def _intercept(params: IndexParams, v: Village) -> float:
    from .model import CommonIntercept
    if isinstance(params.intercepts, CommonIntercept):
        return params.intercepts.c0 + (v.xi_bar or 0.0)
    return params.intercept_for(v.id)
