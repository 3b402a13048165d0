import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillover_welfare.equilibrium import (bisect_fixed_point, contraction_bound,
                                           contraction_holds, fixed_point_iterate,
                                           solve_pi_baseline, solve_pi_policy, take_up_map,
                                           uniqueness_scan)
from spillover_welfare.model import LOGIT, PROBIT, CommonIntercept, IndexParams, PolicyScenario, Village
from tests.oracles import bisection_root, logistic


def make_village(rng, n=60, bimodal=False):
    if bimodal:
        wealth = np.where(rng.random(n) < 0.5, rng.uniform(0, 2000, n), rng.uniform(40000, 60000, n))
    else:
        wealth = rng.lognormal(9.5, 1.0, n)
    return Village(1, np.arange(n), rng.choice([50.0, 150.0, 250.0], n), wealth,
                   rng.normal(size=(n, 1)))


def params(alpha, error=LOGIT, c0=0.5, c1=-0.01, c2=2e-5, c3=(0.2,)):
    return IndexParams(c1, c2, c3, alpha, CommonIntercept(c0), error)


def test_contraction_constants():
    assert contraction_bound(LOGIT) == 4.0
    assert abs(contraction_bound(PROBIT) - math.sqrt(2 * math.pi)) < 1e-12
    assert contraction_holds(2.4, LOGIT)
    # 2.4 / sqrt(2 pi) = 0.957, inside the probit bound; 2.6 is outside
    assert contraction_holds(2.4, PROBIT)
    assert not contraction_holds(2.6, PROBIT)
    assert not contraction_holds(4.0, "logit")


def test_two_household_example():
    v = Village(1, [1, 2], [0.0, 0.0], [0.0, 0.0])
    p = IndexParams(-1.0, 0.0, (), 1.0, CommonIntercept(0.0), LOGIT)
    res = solve_pi_baseline(v, p, 0.0)
    oracle = bisection_root(lambda x: x - logistic(x), 0.0, 1.0)
    assert abs(res.value - oracle) < 1e-10
    assert round(res.value, 4) == 0.6590


def test_alpha_zero_is_explicit():
    rng = np.random.default_rng(0)
    v = make_village(rng)
    p = params(0.0)
    res = solve_pi_baseline(v, p, 150.0)
    direct = np.mean(LOGIT.cdf(0.5 - 1.5 + 2e-5 * v.wealth + 0.2 * v.covariates[:, 0]))
    assert res.iterations == 0 and res.value == pytest.approx(direct, abs=1e-15)
    rep = uniqueness_scan(v, p, 150.0)
    assert rep.roots == pytest.approx((direct,), abs=1e-10)


def test_same_root_from_every_start():
    v = make_village(np.random.default_rng(1))
    p = params(3.0)
    vals = [solve_pi_baseline(v, p, 150.0, init=s).value for s in np.linspace(0, 1, 11)]
    assert max(vals) - min(vals) < 1e-11


def test_simple_maps():
    r = fixed_point_iterate(lambda x: 0.5, init=0.2)
    assert r.value == 0.5 and r.iterations == 1
    assert fixed_point_iterate(lambda x: 0.5 + 0.25 * x).value == pytest.approx(2 / 3, abs=1e-12)
    r = fixed_point_iterate(lambda x: float(logistic(x)))
    assert abs(r.value - bisection_root(lambda x: x - logistic(x), 0, 1)) < 1e-10


def test_bisection_fallback_on_oscillating_map():
    # slope -1.5 at the root: plain iteration diverges into a 2-cycle
    fmap = lambda x: float(np.clip(0.5 - 1.5 * (x - 0.4), 0, 1))  # noqa: E731
    r = fixed_point_iterate(fmap)
    assert r.method != "iteration"
    assert abs(r.value - fmap(r.value)) < 1e-12


def test_damping_validated():
    with pytest.raises(ValueError):
        fixed_point_iterate(lambda x: x, damping=0.0)


def test_policy_extremes_match_baseline():
    v = make_village(np.random.default_rng(2))
    p = params(2.0)
    lo = solve_pi_policy(v, p, PolicyScenario(250, 50, -math.inf))
    hi = solve_pi_policy(v, p, PolicyScenario(250, 50, math.inf))
    assert lo.value == solve_pi_baseline(v, p, 250).value
    assert hi.value == solve_pi_baseline(v, p, 50).value
    below_all = solve_pi_policy(v, p, PolicyScenario(250, 50, v.wealth.min() - 1))
    assert below_all.value == lo.value


def test_subsidy_raises_take_up():
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = make_village(rng)
        p = params(float(rng.uniform(0, 3.9)))
        sc = PolicyScenario(250, 50, float(np.median(v.wealth)))
        pi0 = solve_pi_baseline(v, p, 250).value
        pi1 = solve_pi_policy(v, p, sc).value
        assert pi1 >= pi0
        # brute-force: the policy residual is negative wherever the baseline one vanishes
        f1 = take_up_map(v, p, sc.prices(v.wealth))
        assert pi0 - f1(pi0) <= 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0, 3.99), kind=st.sampled_from(["logit", "probit"]))
def test_scan_agrees_with_solver_under_contraction(seed, alpha, kind):
    if kind == "probit":
        alpha *= math.sqrt(2 * math.pi) / 4
    rng = np.random.default_rng(seed)
    v = make_village(rng, n=30)
    p = params(alpha, kind, c0=float(rng.normal()))
    res = solve_pi_baseline(v, p, 150.0)
    fmap = take_up_map(v, p, np.full(v.n_rows, 150.0))
    assert abs(res.value - fmap(res.value)) < 1e-10
    rep = uniqueness_scan(v, p, 150.0)
    assert len(rep.roots) == 1
    assert abs(rep.roots[0] - res.value) < 1e-9


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    v = make_village(rng)
    perm = rng.permutation(v.n_rows)
    w = v.replace(household_ids=v.household_ids[perm], price=v.price[perm], wealth=v.wealth[perm],
                  covariates=v.covariates[perm])
    p = params(3.5)
    assert abs(solve_pi_baseline(v, p, 100).value - solve_pi_baseline(w, p, 100).value) < 1e-9


def test_nonparticipants_ignored():
    rng = np.random.default_rng(5)
    v = make_village(rng)
    part = np.ones(v.n_rows, bool)
    part[::3] = False
    w = v.replace(participant=part)
    p = params(2.0)
    assert solve_pi_baseline(w, p, 100).value == pytest.approx(
        solve_pi_baseline(w.participants(), p, 100).value, abs=1e-14)


def test_multiple_equilibria_found_beyond_contraction():
    # With |alpha| sup f < 1 the map's slope is below one, so multiplicity
    # needs alpha past the contraction bound: a steep, bimodal village.
    v = Village(1, np.arange(100), np.full(100, 100.0),
                np.r_[np.zeros(50), np.full(50, 1e5)], None)
    p = IndexParams(-0.01, 0.0, (), 8.0, CommonIntercept(-3.0), LOGIT)
    rep = uniqueness_scan(v, p, 100.0)
    assert len(rep.roots) == 3
    fmap = take_up_map(v, p, np.full(100, 100.0))
    for r in rep.roots:
        assert abs(r - fmap(r)) < 1e-8


def test_alpha_3_9_logit_scan_stays_unique():
    rng = np.random.default_rng(6)
    for _ in range(20):
        v = make_village(rng, 80, bimodal=True)
        p = params(3.9, c0=float(rng.uniform(-4, 0)), c1=-0.02, c2=1e-4)
        assert len(uniqueness_scan(v, p, 100.0).roots) == 1


def test_bisect_fixed_point_requires_bracket():
    r = bisect_fixed_point(lambda x: 0.3 + 0.5 * x)
    assert r.value == pytest.approx(0.6, abs=1e-12)


def test_scan_grid_validated():
    v = make_village(np.random.default_rng(7))
    with pytest.raises(ValueError):
        uniqueness_scan(v, params(1.0), 100.0, grid_size=2)
