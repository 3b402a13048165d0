import math

import numpy as np
import pytest
from scipy import special
from scipy.spatial.distance import cdist

from spillover_welfare import _kernels
from spillover_welfare.errors import InputError
from spillover_welfare.estimation import FitSpec, fit_fpl
from spillover_welfare.model import PROBIT, CommonIntercept, Dataset, IndexParams
from spillover_welfare.simulation import VillageDesign, PopulationConfig, standard_population
from spillover_welfare.spatial import (SpatialConfig, conditional_cdf_H, convergence_study,
                                       correlation, fit_sd, sample_gp, sample_region,
                                       sd_choice_probabilities, sd_choice_probability,
                                       simulate_game, solve_conditional_beliefs)


def toy(n=20, seed=0, side=5.0):
    rng = np.random.default_rng(seed)
    return side * rng.random((n, 2)), rng.normal(-0.3, 0.8, n)


def one_sweep_oracle(locs, base, alpha, phi, field):
    """Direct operator application using the closed-form conditional CDF."""
    x = _kernels.crossings(field.psi, base, alpha, field.e_grid)
    d = cdist(locs, locs, metric="cityblock")
    n = len(base)
    out = np.empty_like(field.psi)
    for h in range(n):
        dh = d[h].copy()
        dh[h] = np.inf  # own pair is uncorrelated
        prob = 1.0 - conditional_cdf_H(x[None, :], field.e_grid[:, None], dh[None, :], phi)
        out[h] = prob.mean(axis=1)
    return out


# --- geometry and the field ------------------------------------------------------------

def test_region_scaling_and_determinism():
    a = sample_region(SpatialConfig(100, 1.0, seed=3))
    assert SpatialConfig(100).side == 10.0 and SpatialConfig(400).side == 20.0
    assert a.min() >= 0 and a.max() <= 10
    assert np.array_equal(a, sample_region(SpatialConfig(100, 1.0, seed=3)))
    d1 = cdist(a, a, "cityblock").mean()
    b = sample_region(SpatialConfig(400, 1.0, seed=3))
    assert cdist(b, b, "cityblock").mean() / d1 == pytest.approx(2.0, rel=0.1)


def test_config_validation():
    for kw in (dict(n_households=1), dict(n_households=5, phi=0.0),
               dict(n_households=5, density_c=-1.0), dict(n_households=5, marginal="logit")):
        with pytest.raises(InputError):
            SpatialConfig(**kw)


def test_correlogram():
    locs = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
    R = correlation(locs, 1.0)
    assert R[0, 1] == pytest.approx(math.exp(-1)) and R[0, 2] == pytest.approx(math.exp(-1))
    assert R[1, 2] == pytest.approx(math.exp(-1))
    assert np.all(np.diag(R) == 1)


def test_gp_empirical_correlation():
    locs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.5], [1e4, 0.0]])
    draws = sample_gp(locs, 1.0, 7, n_draws=10_000)
    emp = np.corrcoef(draws.T)
    target = correlation(locs, 1.0)
    se = (1 - target ** 2) / math.sqrt(10_000)
    off = ~np.eye(4, dtype=bool)
    assert np.all(np.abs(emp - target)[off] <= 3 * se[off])
    assert np.allclose(draws.std(axis=0), 1.0, atol=0.03)


def test_gp_coincident_points_share_a_value():
    locs = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 1.0]])
    x = sample_gp(locs, 2.0, 1)
    assert x[0] == x[1]
    with pytest.raises(InputError):
        sample_gp(locs[:1], 2.0, 1)


def test_conditional_cdf_examples():
    d_half = math.log(2.0)  # rho = 0.5 at phi = 1
    assert conditional_cdf_H(0.5, 1.0, d_half, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert conditional_cdf_H(0.3, -2.0, 1e6, 1.0) == pytest.approx(special.ndtr(0.3))
    assert conditional_cdf_H(0.3, 0.2, 0.0, 1.0) == 1.0
    assert conditional_cdf_H(0.1, 0.2, 0.0, 1.0) == 0.0
    grid = np.linspace(-3, 3, 61)
    hi = conditional_cdf_H(grid, 1.0, 0.7, 2.0)
    lo = conditional_cdf_H(grid, -1.0, 0.7, 2.0)
    assert np.all(hi <= lo)
    with pytest.raises(InputError):
        conditional_cdf_H(0.0, 0.0, -1.0, 1.0)


# --- belief fixed point ------------------------------------------------------------------

def test_field_satisfies_the_operator():
    locs, base = toy(25)
    alpha, phi = 1.5, 2.0
    f = solve_conditional_beliefs(locs, base, alpha, phi, tol=1e-11)
    assert np.all((f.psi >= 0) & (f.psi <= 1))
    assert np.all(np.diff(f.psi, axis=1) >= -1e-12)
    direct = one_sweep_oracle(locs, base, alpha, phi, f)
    assert np.max(np.abs(direct - f.psi)) < 1e-9


def test_uncorrelated_limit_matches_iid_operator():
    locs = np.arange(30.0)[:, None] * np.array([[1e3, 0.0]])
    base = np.random.default_rng(2).normal(0, 1, 30)
    f = solve_conditional_beliefs(locs, base, 1.8, 1.0, tol=1e-13)
    assert np.max(np.abs(f.psi - f.pi_bar)) < 1e-10
    assert f.pi_bar == pytest.approx(np.mean(special.ndtr(base + 1.8 * f.pi_bar)), abs=1e-12)


def test_small_phi_gives_constant_beliefs():
    locs, base = toy(40)
    f = solve_conditional_beliefs(locs, base, 2.0, 1e-3)
    assert np.max(np.abs(f.psi - f.pi_bar)) < 1e-6


def test_alpha_zero_is_one_conditional_expectation():
    # with no interaction the field is the conditional mean of neighbours' choices
    locs, base = toy(20, seed=4)
    f = solve_conditional_beliefs(locs, base, 0.0, 2.0)
    assert f.sweeps <= 2
    assert np.max(np.abs(one_sweep_oracle(locs, base, 0.0, 2.0, f) - f.psi)) < 1e-10
    assert f.pi_bar == pytest.approx(np.mean(special.ndtr(base)), abs=1e-14)
    assert np.array_equal(sd_choice_probabilities(f), special.ndtr(base))


def test_beliefs_flatten_with_a_larger_domain():
    rng = np.random.default_rng(9)
    spread = []
    for n in (50, 200):
        locs = math.sqrt(n) * rng.random((n, 2))
        f = solve_conditional_beliefs(locs, rng.normal(0, 0.5, n), 1.5, 2.0)
        assert np.all(np.diff(f.psi, axis=1) >= -1e-12)
        spread.append(np.mean(f.psi[:, -1] - f.psi[:, 0]))
    assert spread[1] < spread[0]


def test_contraction_required():
    locs, base = toy(5)
    with pytest.raises(InputError):
        solve_conditional_beliefs(locs, base, 2.6, 1.0)


# --- choice probabilities ----------------------------------------------------------------

def test_choice_probability_against_dense_grid():
    locs, base = toy(20, seed=1)
    alpha = 2.0
    f = solve_conditional_beliefs(locs, base, alpha, 2.0)
    e = np.linspace(-9, 9, 100_001)
    w = np.exp(-0.5 * e ** 2) / math.sqrt(2 * math.pi)
    for h in range(20):
        g = base[h] + alpha * np.interp(e, f.e_grid, f.psi[h]) + e
        buy = (g >= 0).astype(float)
        # split the one cell where g changes sign at its linear root
        k = np.flatnonzero(np.diff(buy))
        frac = np.zeros(e.size - 1)
        frac[k] = g[k + 1] / (g[k + 1] - g[k])
        cell = 0.5 * (w[:-1] + w[1:]) * np.diff(e)
        brute = np.sum(cell * np.where(frac > 0, frac, buy[:-1] * buy[1:]))
        assert sd_choice_probability(h, f) == pytest.approx(brute, abs=1e-5)


def test_constant_belief_reduction():
    locs, base = toy(10)
    f = solve_conditional_beliefs(locs, base, 1.0, 2.0)
    const = f.__class__(f.e_grid, np.full_like(f.psi, 0.4), 0.0, 0.4, base, 1.0)
    assert np.allclose(sd_choice_probabilities(const), special.ndtr(base + 0.4), atol=1e-15)


# --- simulation and convergence ------------------------------------------------------------

PROBIT_PARAMS = IndexParams(-0.005, 1e-5, (0.0, 0.0), 1.5, CommonIntercept(0.0), PROBIT)


def test_spatial_simulation_is_deterministic():
    pop = standard_population(2, 60, xi_bars=[0.0, 0.2])
    a = simulate_game(pop, PROBIT_PARAMS, 5, SpatialConfig(60))
    b = simulate_game(pop, PROBIT_PARAMS, 5, SpatialConfig(60))
    assert a == b
    assert all(v.location is not None for v in a.villages)
    c = simulate_game(pop, PROBIT_PARAMS, 6, SpatialConfig(60))
    assert c != a


def test_iid_take_up_matches_equilibrium():
    pop = standard_population(1, 4000, xi_bars=[0.0])
    ds = simulate_game(pop, PROBIT_PARAMS, 1)
    v = ds.villages[0]
    from spillover_welfare.equilibrium import fixed_point_iterate
    from spillover_welfare.model import linear_index
    base = linear_index(PROBIT_PARAMS, v.price, v.wealth, v.covariates, 0.0)
    pi = fixed_point_iterate(lambda p: float(np.mean(special.ndtr(base + 1.5 * p)))).value
    assert abs(v.outcome.mean() - pi) < 3 * math.sqrt(pi * (1 - pi) / v.n_rows)


def test_spatial_simulation_rejects_logit():
    from spillover_welfare.model import LOGIT
    with pytest.raises(InputError):
        simulate_game(standard_population(1, 10), PROBIT_PARAMS.replace(error=LOGIT), 0,
                      SpatialConfig(10))


def test_convergence_study_small():
    rows = convergence_study([30, 120], 3, 2.0, PROBIT_PARAMS)
    assert [r.N for r in rows] == [30, 120]
    assert rows[1].lam == pytest.approx(math.sqrt(120))
    assert rows[1].mean_abs_dev < rows[0].mean_abs_dev
    assert all(r.mean_abs_dev >= 0 and r.seeds == 3 for r in rows)
    flat = convergence_study([30, 120], 2, 2.0, PROBIT_PARAMS.replace(alpha=0.0), prices=(0.0,))
    assert all(r.mean_abs_dev > 0 for r in flat)
    tiny = convergence_study([30, 120], 2, 1e-3, PROBIT_PARAMS)
    assert all(r.sup_dev < 1e-6 for r in tiny)
    with pytest.raises(InputError):
        convergence_study([100, 50], 2, 2.0, PROBIT_PARAMS)


# --- estimation ----------------------------------------------------------------------------

def test_fit_sd_small_phi_matches_fpl():
    pop = PopulationConfig((VillageDesign(1, 300, 0.0, tuple(np.linspace(0, 300, 22))),
                            VillageDesign(2, 300, 0.0, tuple(np.linspace(0, 300, 22)))))
    truth = IndexParams(-0.006, 2e-5, (0.0, 0.0), 1.2, CommonIntercept(-0.2), PROBIT)
    ds = simulate_game(pop, truth, 3, SpatialConfig(300, phi=1e-3))
    spec = FitSpec("FPL", PROBIT, "none", covariates=())
    fpl = fit_fpl(ds, spec)
    sd = fit_sd(ds, 1e-3, truth, FitSpec("BR", PROBIT, "none", covariates=()), compute_se=True)
    assert sd.converged
    assert np.allclose(sd.estimates, fpl.estimates, rtol=1e-3, atol=2e-3 * fpl.std_errors.max())
    assert np.all(sd.std_errors > 0)
    assert Dataset(ds.villages, ds.covariate_names) == ds
