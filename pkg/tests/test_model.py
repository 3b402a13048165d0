import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillover_welfare.errors import InputError, WelfarePreconditionError
from spillover_welfare.model import (LOGIT, PROBIT, CommonIntercept, Dataset, ErrorDist,
                                     Household, IndexParams, PolicyScenario, Village,
                                     VillageIntercepts, coefficients_from_betas,
                                     demand_probability, participation_scale,
                                     spillover_split, structural_betas)


def params(c1=-0.01, c2=0.0, c3=(), alpha=2.4, c0=0.0, error=LOGIT):
    return IndexParams(c1, c2, c3, alpha, CommonIntercept(c0), error)


# --- demand probability -------------------------------------------------------

def test_alpha_zero_ignores_belief():
    p = params(alpha=0.0, c3=(0.3,))
    a = demand_probability(p, 100, 5000, [1.0], 0.3, 0.2)
    b = demand_probability(p, 100, 5000, [1.0], 0.7, 0.2)
    assert a == b


def test_zero_index_gives_half():
    p = params(c1=-0.01, c2=0.0, alpha=2.0)
    # -0.01 * 100 + 2 * 0.5 = 0
    assert demand_probability(p, 100, 0, [], 0.5, 0.0) == 0.5


def test_hand_evaluated_logit_case():
    p = params(c1=-0.01, alpha=2.4)
    got = demand_probability(p, 250, 0, [], 0.5, 0.0)
    assert got == pytest.approx(1.0 / (1.0 + math.exp(1.3)), abs=1e-15)


def test_belief_outside_unit_interval_rejected():
    with pytest.raises(InputError):
        demand_probability(params(), 100, 0, [], 1.2, 0.0)


def test_covariate_length_checked():
    with pytest.raises(InputError):
        demand_probability(params(c3=(0.1, 0.2)), 100, 0, [1.0], 0.5, 0.0)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(0, 1000), y=st.floats(0, 1e5), pi=st.floats(0, 1),
       c0=st.floats(-5, 5), kind=st.sampled_from(["logit", "probit"]))
def test_demand_strictly_inside_unit_interval(p, y, pi, c0, kind):
    q = demand_probability(params(c1=-0.003, c2=1e-5, alpha=1.0, c0=c0, error=kind),
                           p, y, [], pi, 0.0)
    assert 0.0 < q < 1.0


@pytest.mark.parametrize("kind", ["logit", "probit"])
@pytest.mark.parametrize("c1,alpha", [(-0.01, 1.5), (0.01, -1.5), (0.0, 0.0)])
def test_monotone_directions(kind, c1, alpha):
    p = params(c1=c1, alpha=alpha, c2=1e-5, error=kind)
    prices = np.linspace(0, 300, 31)
    pis = np.linspace(0, 1, 21)
    for pi in pis[::5]:
        d = np.diff(demand_probability(p, prices, 5000.0, np.zeros((31, 0)), pi, 0.1))
        assert np.all(d <= 0) if c1 <= 0 else np.all(d >= 0)
    for price in prices[::10]:
        d = np.diff(demand_probability(p, price, 5000.0, np.zeros((21, 0)), pis, 0.1))
        assert np.all(d >= 0) if alpha >= 0 else np.all(d <= 0)


@pytest.mark.parametrize("dist", [LOGIT, PROBIT])
def test_density_is_cdf_derivative(dist):
    x = np.linspace(-5, 5, 21)
    h = 1e-5
    fd = (dist.cdf(x + h) - dist.cdf(x - h)) / (2 * h)
    assert np.max(np.abs(fd - dist.pdf(x))) < 1e-6


@pytest.mark.parametrize("dist", [LOGIT, PROBIT])
def test_density_derivative_and_logs(dist):
    x = np.linspace(-5, 5, 21)
    h = 1e-5
    fd = (dist.pdf(x + h) - dist.pdf(x - h)) / (2 * h)
    assert np.max(np.abs(fd - dist.dpdf(x))) < 1e-6
    assert np.allclose(dist.logcdf(x), np.log(dist.cdf(x)), rtol=1e-12)
    assert np.allclose(dist.logsf(x), np.log(dist.sf(x)), rtol=1e-12)
    assert np.allclose(dist.cdf(dist.ppf(np.linspace(0.01, 0.99, 9))), np.linspace(0.01, 0.99, 9))


def test_probit_cdf_accuracy():
    from mpmath import mp, ncdf
    mp.dps = 30
    for x in np.linspace(-8, 8, 33):
        assert abs(PROBIT.cdf(x) - float(ncdf(x))) < 1e-12


def test_error_dist_parse():
    assert ErrorDist.parse("Probit") == PROBIT
    with pytest.raises(InputError):
        ErrorDist.parse("cauchy")


# --- structural transforms ------------------------------------------------------

def test_structural_betas_examples():
    assert structural_betas(params(c1=-2, c2=0.5)) == (2, 1.5)
    assert structural_betas(params(c1=-1, c2=-1)) == (1, 2)
    with pytest.raises(WelfarePreconditionError):
        structural_betas(params(c1=-1, c2=1.5))


@given(b1=st.floats(1e-6, 1e3), b0=st.floats(1e-6, 1e3))
def test_beta_round_trip(b1, b0):
    c1, c2 = coefficients_from_betas(b1, b0)
    got = structural_betas(params(c1=c1, c2=c2))
    assert got[0] == b1
    assert got[1] == pytest.approx(b0, rel=1e-12, abs=1e-12 * b1)


def test_spillover_split_examples():
    s = spillover_split(2.4, 1.2)
    assert (s.alpha1, s.alpha0) == (1.2, -1.2)
    assert (spillover_split(2.4, 0).alpha1, spillover_split(2.4, 0).alpha0) == (0, -2.4)
    assert (spillover_split(2.4, 2.4).alpha1, spillover_split(2.4, 2.4).alpha0) == (2.4, 0)
    assert s.alpha == 2.4
    with pytest.raises(InputError):
        spillover_split(2.4, 3.0)


def village(n_part, total, n_rows=None):
    n_rows = n_rows or n_part
    part = np.zeros(n_rows, bool)
    part[:n_part] = True
    return Village(1, np.arange(n_rows), np.zeros(n_rows), np.zeros(n_rows),
                   participant=part, total_households=total)


def test_participation_scale_examples():
    assert participation_scale(village(181, 226)) == 180 / 225 == 0.8
    assert participation_scale(village(50, 50)) == 1.0
    assert participation_scale(village(2, 3)) == 0.5


def test_total_below_participants_rejected():
    with pytest.raises(InputError):
        village(10, 9)


# --- containers -------------------------------------------------------------------

def test_household_invariants():
    with pytest.raises(InputError):
        Household(1, 1, -1.0, 0.0)
    with pytest.raises(InputError):
        Household(1, 1, 1.0, 0.0, outcome=2)


def test_village_from_households_round_trip():
    hh = [Household(i, 7, 10.0 * i, 100.0 + i, (1.0, 2.0), (0.5 * i, 1.0), i % 2, i != 2)
          for i in range(4)]
    v = Village.from_households(7, hh, total_households=6)
    assert v.households == hh
    assert v.n_participants == 3
    assert v.participants().n_rows == 3
    assert Village.from_households(7, v.households, total_households=6) == v


def test_village_is_immutable():
    v = village(3, 3)
    with pytest.raises(AttributeError):
        v.id = 2
    with pytest.raises(ValueError):
        v.price[0] = 1.0


def test_dataset_rejects_duplicates():
    v1 = Village(1, [1, 2], [0, 0], [0, 0])
    v2 = Village(2, [2, 3], [0, 0], [0, 0])
    with pytest.raises(InputError):
        Dataset((v1, v2))
    with pytest.raises(InputError):
        Dataset((v1, v1.replace(household_ids=[5, 6])))


def test_intercepts_union():
    p = IndexParams(-1, 0, (), 1.0, {3: 0.5, 1: -0.2})
    assert isinstance(p.intercepts, VillageIntercepts)
    assert p.intercept_for(3) == 0.5
    assert p.intercepts.values == ((1, -0.2), (3, 0.5))
    with pytest.raises(InputError):
        p.intercept_for(2)
    assert IndexParams(-1, 0, (), 1.0, 0.25).intercept_for(99) == 0.25


def test_policy_scenario():
    sc = PolicyScenario(250, 50, 8000)
    assert list(sc.prices([7999, 8000, 8001])) == [50, 50, 250]
    with pytest.raises(InputError):
        PolicyScenario(50, 250, 8000)
    assert list(PolicyScenario(250, 50, -math.inf).eligible([0.0])) == [False]
