"""Spatially correlated taste shocks under increasing-domain sampling.

Households sit uniformly on a square whose side grows like sqrt(N / c), and
their shocks form a unit-variance Gaussian field with correlation
exp(-d / phi) in L1 distance d.  Each household then forms beliefs about
village take-up conditional on its own shock; those beliefs solve a
functional fixed point, computed here on a grid of shock values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special
from scipy.spatial.distance import cdist

from . import _kernels
from .equilibrium import contraction_bound, fixed_point_iterate
from .errors import InputError, NumericalError, SolverError
from .estimation import FitResult, FitSpec, _covariance, _pool, index_loglik_terms
from .model import (PROBIT, CommonIntercept, Dataset, IndexParams, PolicyScenario, Village,
                    linear_index)
from .simulation import COVARIATE_NAMES, PopulationConfig, draw_population, rng_for

__all__ = [
    "SpatialConfig",
    "BeliefField",
    "ConvergenceRow",
    "sample_region",
    "sample_gp",
    "correlation",
    "conditional_cdf_H",
    "solve_conditional_beliefs",
    "village_belief_field",
    "sd_choice_probability",
    "sd_choice_probabilities",
    "simulate_game",
    "convergence_study",
    "fit_sd",
    "E_GRID_SIZE",
    "E_GRID_BOUND",
]

E_GRID_SIZE = 129
E_GRID_BOUND = 6.0
BELIEF_TOL = 1e-8
MAX_SWEEPS = 5000


@dataclass(frozen=True)
class SpatialConfig:
    """Increasing-domain design: ``n_households`` uniform on [0, lambda]^2, lambda = sqrt(N / c)."""

    n_households: int
    density_c: float = 1.0
    phi: float = 2.0
    seed: int = 0
    marginal: str = "probit"

    def __post_init__(self):
        if self.n_households < 2:
            raise InputError("need at least two households")
        if not self.phi > 0:
            raise InputError("phi must be positive")
        if not self.density_c > 0:
            raise InputError("density_c must be positive")
        if self.marginal != "probit":
            raise InputError("only the probit (Gaussian) marginal is supported")

    @property
    def side(self) -> float:
        return math.sqrt(self.n_households / self.density_c)


@dataclass(frozen=True, eq=False)
class BeliefField:
    """psi[h, i]: household h's belief about village take-up when its own shock is e_grid[i]."""

    e_grid: np.ndarray
    psi: np.ndarray
    residual: float
    pi_bar: float
    base: np.ndarray = field(repr=False)
    alpha: float = 0.0
    sweeps: int = 0
    crossings: np.ndarray = field(default=None, repr=False)

    def choice_probabilities(self) -> np.ndarray:
        return sd_choice_probabilities(self)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    lam: float
    mean_abs_dev: float
    sup_dev: float
    seeds: int
    phi: float


# ---------------------------------------------------------------------------
# Geometry and the Gaussian field
# ---------------------------------------------------------------------------


def sample_region(config: SpatialConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """N uniform locations on [0, lambda_N]^2."""
    rng = rng_for(config.seed, 2) if rng is None else rng
    return config.side * rng.random((config.n_households, 2))


def correlation(locations, phi: float) -> np.ndarray:
    d = cdist(locations, locations, metric="cityblock")
    with np.errstate(over="ignore"):
        return np.exp(-d / phi)


def sample_gp(locations, phi: float, seed, n_draws: int | None = None) -> np.ndarray:
    """Draw(s) of the zero-mean unit-variance field with correlation exp(-d / phi).

    Coincident locations share one value.  Returns shape (N,), or
    (n_draws, N) when ``n_draws`` is given.
    """
    locations = np.asarray(locations, float)
    if len(locations) < 2:
        raise InputError("need at least two locations")
    uniq, inverse = np.unique(locations, axis=0, return_inverse=True)
    R = correlation(uniq, phi)
    L = None
    jitter = 1e-10
    while jitter <= 1e-6 * (1 + 1e-9):
        try:
            L = linalg.cholesky(R + jitter * np.eye(len(uniq)), lower=True)
            break
        except linalg.LinAlgError:
            jitter *= 10.0
    if L is None:
        raise NumericalError("correlation matrix not positive definite even with jitter 1e-6")
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, 3)
    if n_draws is None:
        return (L @ rng.standard_normal(len(uniq)))[inverse.ravel()]
    return (rng.standard_normal((n_draws, len(uniq))) @ L.T)[:, inverse.ravel()]


def conditional_cdf_H(e_tilde, e, d, phi):
    """P(shock of a neighbour at distance d <= e_tilde | own shock = e)."""
    e_tilde, e, d = np.broadcast_arrays(np.asarray(e_tilde, float), np.asarray(e, float),
                                        np.asarray(d, float))
    if np.any(d < 0):
        raise InputError("distance must be nonnegative")
    rho = np.exp(-d / phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (e_tilde - rho * e) / np.sqrt(1.0 - rho * rho)
        out = np.where(rho >= _kernels.RHO_ONE, (e_tilde >= e).astype(float), special.ndtr(z))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Belief fixed point
# ---------------------------------------------------------------------------


def _e_grid(size):
    return np.linspace(-E_GRID_BOUND, E_GRID_BOUND, size)


def _pi_bar(base, alpha):
    fmap = lambda p: float(np.mean(special.ndtr(base + alpha * p)))  # noqa: E731
    return fixed_point_iterate(fmap).value


def solve_conditional_beliefs(locations, base_index, alpha: float, phi: float,
                              e_grid_size: int = E_GRID_SIZE, tol: float = BELIEF_TOL,
                              max_sweeps: int = MAX_SWEEPS, init=None, rho=None) -> BeliefField:
    """Iterate the conditional-belief operator to a sup-norm change below ``tol``.

    ``base_index`` holds each household's index without the belief term
    (intercept plus observed characteristics).  ``init`` may be a previous
    BeliefField or psi matrix of matching shape (warm start); by default the
    iteration starts from the constant-belief equilibrium.
    """
    base = np.ascontiguousarray(base_index, dtype=float)
    n = base.size
    if abs(alpha) >= contraction_bound(PROBIT):
        raise InputError(f"alpha={alpha} violates the contraction condition")
    e_grid = _e_grid(e_grid_size)
    pi_bar = _pi_bar(base, alpha)
    if rho is None:
        rho = correlation(np.asarray(locations, float), phi)
    rho = np.ascontiguousarray(rho)
    if isinstance(init, BeliefField):
        init = init.psi
    psi = np.full((n, e_grid_size), pi_bar) if init is None else np.array(init, float)
    if psi.shape != (n, e_grid_size):
        raise InputError("warm start has the wrong shape")
    new = np.empty_like(psi)
    resid = np.inf
    for sweep in range(1, max_sweeps + 1):
        _kernels.belief_sweep(psi, base, float(alpha), e_grid, rho, new)
        if np.any(np.diff(new, axis=1) < -1e-12):
            raise NumericalError("belief lost monotonicity in the own shock")
        resid = float(np.max(np.abs(new - psi)))
        psi, new = new, psi
        if resid < tol:
            break
    else:
        raise SolverError(f"belief iteration did not converge in {max_sweeps} sweeps "
                          f"(last change {resid:.3e})", last_value=resid)
    x = _kernels.crossings(psi, base, float(alpha), e_grid)
    return BeliefField(e_grid, psi, resid, pi_bar, base, float(alpha), sweep, x)


def village_base_index(village: Village, params: IndexParams, prices=None, covariate_cols=None):
    v = village.participants()
    p = v.price if prices is None else prices
    z = v.covariates if covariate_cols is None else v.covariates[:, covariate_cols]
    return linear_index(params, p, v.wealth, z, params.intercept_for(village.id))


def village_belief_field(village: Village, params: IndexParams, phi: float, **kw) -> BeliefField:
    v = village.participants()
    if v.location is None:
        raise InputError(f"village {village.id} has no locations")
    return solve_conditional_beliefs(v.location, village_base_index(v, params), params.alpha,
                                     phi, **kw)


def sd_choice_probabilities(field: BeliefField) -> np.ndarray:
    """Probability that each household buys, integrating over its own shock."""
    x = _kernels.crossings(field.psi, field.base, field.alpha, field.e_grid)
    return special.ndtr(-x)


def sd_choice_probability(h: int, field: BeliefField) -> float:
    x = _kernels.crossing(field.base[h], field.alpha, field.psi[h], field.e_grid)
    return float(special.ndtr(-x))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def simulate_game(population: PopulationConfig, params: IndexParams, seed: int,
                  spatial: SpatialConfig | None = None,
                  scenario: PolicyScenario | None = None) -> Dataset:
    """Simulated choices; IID shocks when ``spatial`` is None, a Gaussian field otherwise.

    In the spatial case each village is placed on its own square with the
    design's density and correlation scale, and ``spatial.n_households`` is
    ignored in favour of each village's household count.  With a scenario,
    households face its prices instead of the village menu.
    """
    from .simulation import _intercept, simulate_iid
    if spatial is None:
        if scenario is not None:
            ds = simulate_iid(population, params, seed)
            return _resimulate_iid_at(ds, population, params, seed, scenario)
        return simulate_iid(population, params, seed)
    if params.error.kind != "probit":
        raise InputError("spatial simulation uses the probit marginal")
    out = []
    for k, v in enumerate(draw_population(population, seed)):
        if scenario is not None:
            v = v.replace(price=scenario.prices(v.wealth))
        cfg = SpatialConfig(v.n_rows, spatial.density_c, spatial.phi, seed)
        locs = sample_region(cfg, rng_for(seed, 2, k))
        c = _intercept(params, v)
        base = linear_index(params, v.price, v.wealth, v.covariates, c)
        field_ = solve_conditional_beliefs(locs, base, params.alpha, spatial.phi)
        eps = sample_gp(locs, spatial.phi, rng_for(seed, 3, k))
        a = (eps >= field_.crossings).astype(np.int8)
        out.append(v.replace(location=locs, outcome=a, xi_bar=c))
    return Dataset(tuple(out), COVARIATE_NAMES)


def _resimulate_iid_at(ds, population, params, seed, scenario):
    from .simulation import _intercept
    out = []
    for k, v in enumerate(ds.villages):
        v = v.replace(price=scenario.prices(v.wealth))
        c = _intercept(params, v)
        base = linear_index(params, v.price, v.wealth, v.covariates, c)
        pi = fixed_point_iterate(lambda p: float(np.mean(params.error.cdf(base + params.alpha * p)))).value
        eps = params.error.sample(rng_for(seed, 1, k), v.n_rows)
        out.append(v.replace(outcome=(base + params.alpha * pi + eps >= 0).astype(np.int8)))
    return Dataset(tuple(out), ds.covariate_names)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------


def _shock_weights(e_grid):
    w = np.exp(-0.5 * e_grid ** 2)
    return w / w.sum()


def belief_deviation(field: BeliefField) -> tuple[float, float]:
    """(mean over households of the density-weighted |psi - pi_bar|, sup |psi - pi_bar|)."""
    dev = np.abs(field.psi - field.pi_bar)
    return float(np.mean(dev @ _shock_weights(field.e_grid))), float(dev.max())


def convergence_study(n_list, seeds: int, phi: float, params: IndexParams,
                      density_c: float = 1.0, prices=None, master_seed: int = 0,
                      e_grid_size: int = E_GRID_SIZE) -> list[ConvergenceRow]:
    """Seed-averaged distance between conditional beliefs and the constant-belief equilibrium.

    Households have a price drawn from ``prices`` (default: the 22-price
    menu), log-normal wealth and the population's covariates; the index uses
    ``params`` with its common intercept.
    """
    from .simulation import PRICE_MENU, VillageDesign
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InputError("N list must be increasing")
    if seeds < 1:
        raise InputError("need at least one seed")
    prices = PRICE_MENU if prices is None else tuple(prices)
    rows = []
    for n in n_list:
        cfg = SpatialConfig(n, density_c, phi, master_seed)
        means, sups = [], []
        for r in range(seeds):
            pop = PopulationConfig((VillageDesign(1, n, 0.0, prices),))
            v = draw_population(pop, rng_seed(master_seed, n, r))[0]
            locs = sample_region(cfg, rng_for(master_seed, 4, n, r))
            base = linear_index(params, v.price, v.wealth, v.covariates, params.intercept_for(1))
            f = solve_conditional_beliefs(locs, base, params.alpha, phi, e_grid_size)
            m, s = belief_deviation(f)
            means.append(m)
            sups.append(s)
        rows.append(ConvergenceRow(n, cfg.side, float(np.mean(means)), float(np.mean(sups)),
                                   seeds, float(phi)))
    return rows


def rng_seed(master: int, *keys) -> int:
    """Derived integer seed for (master, keys...)."""
    return int(np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
               .generate_state(1)[0])


# ---------------------------------------------------------------------------
# Estimation with conditional beliefs
# ---------------------------------------------------------------------------


class _SdObjective:
    def __init__(self, dataset: Dataset, phi: float, spec: FitSpec, tol: float):
        self.pool = _pool(dataset, spec.covariates)
        self.parts = [v.participants() for v in dataset.villages]
        for v in self.parts:
            if v.location is None:
                raise InputError(f"village {v.id} has no locations")
        cols = (list(range(len(dataset.covariate_names))) if spec.covariates is None
                else [dataset.covariate_names.index(c) for c in spec.covariates])
        self.W = [np.column_stack([np.ones(v.n_rows), v.price, v.wealth, v.covariates[:, cols]])
                  for v in self.parts]
        allW = np.vstack(self.W)
        self.mean = np.r_[0.0, allW[:, 1:].mean(axis=0)]
        sd = allW[:, 1:].std(axis=0)
        self.sd = np.r_[1.0, np.where(sd > 0, sd, 1.0)]
        self.Ws = [(w - self.mean) / self.sd for w in self.W]
        self.rho = [np.ascontiguousarray(correlation(v.location, phi)) for v in self.parts]
        self.a = [v.outcome.astype(float) for v in self.parts]
        self.phi = phi
        self.tol = tol
        self.fields = [None] * len(self.parts)
        self.k = allW.shape[1] + 1
        self.n = allW.shape[0]
        self.alpha_max = contraction_bound(PROBIT) - 1e-6
        self.evals = 0

    def to_raw(self, x):
        b = x[:-1] / self.sd
        b[0] = x[0] - np.dot(x[1:-1], self.mean[1:] / self.sd[1:])
        return np.r_[b, x[-1]]

    def from_raw(self, raw):
        b = raw[:-1] * self.sd
        b[0] = raw[0] + np.dot(raw[1:-1], self.mean[1:])
        return np.r_[b, raw[-1]]

    def raw_jacobian(self):
        J = np.diag(np.r_[1.0 / self.sd, 1.0])
        J[0, 1:-1] = -self.mean[1:] / self.sd[1:]
        return J

    def loglik(self, x) -> float:
        return float(self.loglik_terms(x).sum())

    def loglik_terms(self, x) -> np.ndarray:
        self.evals += 1
        alpha = float(np.clip(x[-1], 0.0, self.alpha_max))
        out = []
        for j, (w, a) in enumerate(zip(self.Ws, self.a)):
            base = w @ x[:-1]
            f = solve_conditional_beliefs(None, base, alpha, self.phi, tol=self.tol,
                                          init=self.fields[j], rho=self.rho[j])
            self.fields[j] = f
            # P(buy) = Phi(-crossing)
            ll, _, _ = index_loglik_terms(PROBIT, -f.crossings, a)
            out.append(ll)
        return np.concatenate(out)


def fit_sd(dataset: Dataset, phi: float, start: IndexParams,
           spec: FitSpec | None = None, compute_se: bool = True,
           tol: float = 1e-10, step: float = 1e-4,
           max_iter: int = 50) -> FitResult:
    """Maximum likelihood with conditional beliefs re-solved at every evaluation.

    Single common intercept; probit marginal; ``phi`` treated as known.
    Scores are central finite differences in standardized coordinates and the
    search is BHHH, which is adequate at a few thousand households.
    """
    spec = spec or FitSpec("BR", PROBIT)
    obj = _SdObjective(dataset, phi, spec, tol)
    c3 = np.asarray(start.c3, float)
    if spec.covariates is not None:
        idx = [dataset.covariate_names.index(c) for c in spec.covariates]
        c3 = c3[idx] if len(c3) == len(dataset.covariate_names) else c3
    raw0 = np.r_[start.intercept_for(dataset.villages[0].id), start.c1, start.c2, c3,
                 np.clip(start.alpha, 0.0, obj.alpha_max)]
    x0 = obj.from_raw(raw0)
    n = obj.n

    def scores(x):
        """Per-household central-difference scores, shape (n, k)."""
        S = np.empty((n, obj.k))
        for j in range(obj.k):
            lo, hi = x[j] - step, x[j] + step
            if j == obj.k - 1:
                lo, hi = max(lo, 0.0), min(hi, obj.alpha_max)
            xp, xm = x.copy(), x.copy()
            xp[j], xm[j] = hi, lo
            S[:, j] = (obj.loglik_terms(xp) - obj.loglik_terms(xm)) / (hi - lo)
        return S

    def grad(x):
        return scores(x).sum(axis=0)

    # Ascent on a curvature matrix that starts at the BHHH outer product
    # and is refined by BFGS updates; each iteration costs 2k evaluations
    x = x0.copy()
    ll = obj.loglik(x)
    S = scores(x)
    g = S.sum(axis=0)
    B = S.T @ S
    it, message, success = 0, "iteration limit", False
    for it in range(1, max_iter + 1):
        d = np.linalg.lstsq(B, g, rcond=None)[0]
        if abs(g @ d) / n < 1e-13:
            success, message = True, "converged"
            break
        t = 1.0
        while t > 1e-6:
            xn = x + t * d
            xn[-1] = np.clip(xn[-1], 0.0, obj.alpha_max)
            lln = obj.loglik(xn)
            if lln >= ll:
                break
            t *= 0.5
        else:
            message = "line search failed"
            break
        gn = scores(xn).sum(axis=0)
        sx, yg = xn - x, g - gn
        if sx @ yg > 1e-12 * np.linalg.norm(sx) * np.linalg.norm(yg):
            Bs = B @ sx
            B = B - np.outer(Bs, Bs) / (sx @ Bs) + np.outer(yg, yg) / (sx @ yg)
        x, ll, g = xn, lln, gn
    res = optimize.OptimizeResult(x=x, success=success, nit=it, message=message)
    x = res.x
    boundary = bool(x[-1] <= 0.0 and g[-1] < 0) or bool(x[-1] >= obj.alpha_max and g[-1] > 0)
    free = np.ones(obj.k, bool)
    free[-1] = not boundary
    gnorm = float(np.linalg.norm(g[free]) / n)
    raw = obj.to_raw(x)
    names = ["c0", "c1", "c2"] + [f"c3[{c}]" for c in obj.pool.cov_names] + ["alpha"]
    J = obj.raw_jacobian()
    if compute_se:
        H = np.zeros((obj.k, obj.k))
        for j in range(obj.k):
            e = np.zeros(obj.k)
            h = step * 10
            e[j] = h
            if j == obj.k - 1:
                lo = max(x[j] - h, 0.0)
                hi = min(x[j] + h, obj.alpha_max)
                xp, xm = x.copy(), x.copy()
                xp[j], xm[j] = hi, lo
                H[:, j] = (grad(xp) - grad(xm)) / (hi - lo)
            else:
                H[:, j] = (grad(x + e) - grad(x - e)) / (2 * h)
        H = 0.5 * (H + H.T)
        Hf, Jf = H[np.ix_(free, free)], J[:, free]
        cov = _covariance(Hf, Jf)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    else:
        Hf, Jf, cov = None, J, None
        se = np.full(obj.k, np.nan)
    params = IndexParams(raw[1], raw[2], tuple(raw[3:-1]), float(raw[-1]),
                         CommonIntercept(float(raw[0])), PROBIT)
    beliefs = {v.id: float(np.mean(f.choice_probabilities()))
               for v, f in zip(obj.parts, obj.fields)}
    return FitResult(params, float(ll), gnorm, se, bool(res.success or gnorm < 1e-5),
                     {v.id: float(raw[0]) for v in obj.parts}, tuple(names), raw, cov, Hf, Jf,
                     beliefs, {}, "SD", n, int(res.nit), False, boundary, str(res.message))
