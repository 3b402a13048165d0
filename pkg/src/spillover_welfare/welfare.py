"""Compensating variation under a targeted price subsidy with social spillovers.

Sign conventions
----------------
``S`` denotes the compensating variation: the income that has to be handed
to a household after the policy to restore its pre-policy utility.  ``S < 0``
is a welfare gain.  ``cv_cdf_*`` and ``mean_cv_*`` describe ``S`` itself.  Everything that
aggregates or bounds welfare (``welfare_bounds``, ``net_cv``, the policy
report) is expressed as a mean welfare *gain*, i.e. ``-E[S]``, so larger
numbers are better for households.

For each household the spillover coefficient alpha splits into alpha1 >= 0
(utility from others' take-up when buying) and alpha0 = alpha1 - alpha <= 0
(when not buying).  Only alpha is identified; welfare is reported over a grid
of alpha1 in [0, alpha].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from .equilibrium import solve_pi_baseline, solve_pi_policy
from .errors import WelfarePreconditionError
from .model import (Dataset, IndexParams, PolicyScenario, SpilloverSplit, Village,
                    linear_index, spillover_split, structural_betas)
from .quadrature import simpson

__all__ = [
    "CvCdf",
    "WelfareBounds",
    "VillageWelfare",
    "PolicyReport",
    "cv_thresholds",
    "cv_cdf_eligible",
    "cv_cdf_ineligible",
    "mean_cv_eligible",
    "mean_cv_ineligible",
    "welfare_bounds",
    "household_gains",
    "net_cv",
    "subsidy_spending",
    "deadweight_loss",
    "policy_report",
    "comparative_statics",
    "PI_UP",
    "PI_DOWN_A",
    "PI_DOWN_B",
    "ELIGIBLE",
    "INELIGIBLE",
]

PI_UP = "PiUp"
PI_DOWN_A = "PiDown-BranchA"
PI_DOWN_B = "PiDown-BranchB"
ELIGIBLE = "Eligible"
INELIGIBLE = "Ineligible"
CDF_POINTS = 401


# ---------------------------------------------------------------------------
# Thresholds and the interior of the distribution
# ---------------------------------------------------------------------------


def _validate(params: IndexParams, split: SpilloverSplit):
    structural_betas(params)
    alpha = params.alpha
    if alpha < 0:
        raise WelfarePreconditionError(f"welfare needs alpha >= 0, got {alpha}")
    if split.alpha1 < 0 or split.alpha0 > 0:
        raise WelfarePreconditionError("split needs alpha1 >= 0 >= alpha0")
    if abs(split.alpha - alpha) > 1e-12 * max(1.0, abs(alpha)):
        raise WelfarePreconditionError(
            f"split alpha1 - alpha0 = {split.alpha} does not match alpha = {alpha}")


@dataclass(frozen=True)
class _Setup:
    """Everything about one group's CV distribution that does not depend on (y, z)."""

    group: str
    regime: str
    lo: float
    hi: float
    t1: float
    t0: float
    p_ref: float        # price argument origin for the buying branch
    pi_shift: float     # belief argument inside the interior
    params: IndexParams
    p0: float


def cv_thresholds(params: IndexParams, split: SpilloverSplit, scenario: PolicyScenario,
                  pi0: float, pi1: float, group: str) -> tuple[float, float]:
    """Return (t1, t0): the CV levels at which buying, resp. not buying, is indifferent
    for every realisation of the taste shock."""
    beta1, beta0 = structural_betas(params)
    d = pi1 - pi0
    t0 = (params.alpha - split.alpha1) * d / beta0
    if group == ELIGIBLE:
        t1 = scenario.p1 - scenario.p0 - split.alpha1 * d / beta1
    elif group == INELIGIBLE:
        t1 = -split.alpha1 * d / beta1
    else:
        raise ValueError(f"unknown group {group!r}")
    return t1, t0


def _setup(params, split, scenario, pi0, pi1, group) -> _Setup:
    _validate(params, split)
    t1, t0 = cv_thresholds(params, split, scenario, pi0, pi1, group)
    alpha = params.alpha
    d = pi1 - pi0
    p_ref = scenario.p1 if group == ELIGIBLE else scenario.p0
    if t1 <= t0:
        regime = PI_UP if d >= 0 else PI_DOWN_A
        pi_shift = pi0 + (split.alpha1 / alpha) * d if alpha > 0 else pi0
        lo, hi = t1, t0
    else:
        regime = PI_DOWN_B
        pi_shift = pi0 + ((alpha - split.alpha1) / alpha) * d if alpha > 0 else pi0
        lo, hi = t0, t1
    return _Setup(group, regime, float(lo), float(hi), float(t1), float(t0),
                  float(p_ref), float(pi_shift), params, float(scenario.p0))


def _base(params, y, z, intercept):
    return linear_index(params, 0.0, y, z, intercept)


def _interior(s: _Setup, base, a):
    """CDF of S on [lo, hi) for households with index base (broadcast against a)."""
    prm = s.params
    if s.regime == PI_DOWN_B:
        # not buying is the binding option: Pr(option 0 at price p0 + a, income y + a)
        return prm.error.sf(base + prm.c1 * (s.p0 + a) + prm.c2 * a + prm.alpha * s.pi_shift)
    return prm.error.cdf(base + prm.c1 * (s.p_ref - a) + prm.alpha * s.pi_shift)


# ---------------------------------------------------------------------------
# Distribution objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CvCdf:
    """Distribution of the compensating variation for one household."""

    support_lo: float
    support_hi: float
    a: np.ndarray = field(repr=False)
    prob: np.ndarray = field(repr=False)
    regime: str
    group: str
    _setup: _Setup = field(repr=False)
    _base: float = field(repr=False)

    @property
    def grid(self) -> list[tuple[float, float]]:
        return list(zip(self.a.tolist(), self.prob.tolist()))

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        s = self._setup
        inner = _interior(s, self._base, a)
        out = np.where(a < s.lo, 0.0, np.where(a >= s.hi, 1.0, inner))
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        """E[S] from tail integrals of the CDF (adaptive Gauss-Kronrod)."""
        lo, hi = self.support_lo, self.support_hi
        kw = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
        pos = neg = 0.0
        if hi > 0:
            pos = integrate.quad(lambda t: 1.0 - self(t), 0.0, hi,
                                 points=[lo] if 0 < lo < hi else None, **kw)[0]
        if lo < 0:
            neg = integrate.quad(self, lo, 0.0,
                                 points=[hi] if lo < hi < 0 else None, **kw)[0]
        return pos - neg


def _make_cdf(params, split, y, z, scenario, pi0, pi1, intercept, group) -> CvCdf:
    s = _setup(params, split, scenario, pi0, pi1, group)
    base = float(_base(params, y, z, intercept))
    if s.hi > s.lo:
        a = np.linspace(s.lo, s.hi, CDF_POINTS)
    else:
        a = np.array([s.lo])
    prob = np.where(a >= s.hi, 1.0, _interior(s, base, a))
    return CvCdf(s.lo, s.hi, a, prob, s.regime, group, s, base)


def cv_cdf_eligible(params, split, y, z, scenario, pi0, pi1, village_intercept) -> CvCdf:
    return _make_cdf(params, split, y, z, scenario, pi0, pi1, village_intercept, ELIGIBLE)


def cv_cdf_ineligible(params, split, y, z, scenario, pi0, pi1, village_intercept) -> CvCdf:
    return _make_cdf(params, split, y, z, scenario, pi0, pi1, village_intercept, INELIGIBLE)


# ---------------------------------------------------------------------------
# Means
# ---------------------------------------------------------------------------

_CHUNK = 256


def _chunked(base, fn):
    base = np.atleast_1d(base)
    out = np.empty(base.shape)
    for i in range(0, base.size, _CHUNK):
        out[i:i + _CHUNK] = fn(base[i:i + _CHUNK])
    return out


def _mean_a_space(s: _Setup, base):
    """-int_lo^0 G(a) da + int_0^hi (1 - G(a)) da."""
    def one(b):
        b = b[:, None]
        lo = np.full(b.shape[0], s.lo)
        hi = np.full(b.shape[0], s.hi)
        zero = np.zeros(b.shape[0])
        neg = simpson(lambda a: _interior(s, b, a), lo, zero)
        pos = simpson(lambda a: 1.0 - _interior(s, b, a), zero, hi)
        return pos - neg
    return _chunked(base, one)


def _mean_p_space(s: _Setup, base):
    """Same integral after substituting the price faced for the CV."""
    prm = s.params
    pa = prm.alpha * s.pi_shift

    def one(b):
        b = b[:, None]
        n = b.shape[0]
        if s.regime == PI_DOWN_B:
            # p = p0 + a, income y + a; q0(p) = Pr(not buying)
            q = lambda p: prm.error.sf(b + prm.c1 * p + prm.c2 * (p - s.p0) + pa)  # noqa: E731
            neg = simpson(q, np.full(n, s.p0 + s.lo), np.full(n, s.p0))
            pos = simpson(lambda p: 1.0 - q(p), np.full(n, s.p0), np.full(n, s.p0 + s.hi))
        else:
            # p = p_ref - a
            q = lambda p: prm.error.cdf(b + prm.c1 * p + pa)  # noqa: E731
            neg = simpson(q, np.full(n, s.p_ref), np.full(n, s.p_ref - s.lo))
            pos = simpson(lambda p: 1.0 - q(p), np.full(n, s.p_ref - s.hi), np.full(n, s.p_ref))
        return pos - neg
    return _chunked(base, one)


def _mean(params, split, y, z, scenario, pi0, pi1, intercept, group, method):
    s = _setup(params, split, scenario, pi0, pi1, group)
    base = _base(params, y, z, intercept)
    if s.hi == s.lo:
        out = np.full(np.shape(base), s.hi)
    elif method == "p":
        out = _mean_p_space(s, base)
    elif method == "a":
        out = _mean_a_space(s, base)
    else:
        raise ValueError("method must be 'p' or 'a'")
    out = np.reshape(out, np.shape(base))
    return float(out) if out.ndim == 0 else out


def mean_cv_eligible(params, split, y, z, scenario, pi0, pi1, intercept, method="p"):
    """E[S] for households eligible for the subsidy (positive = loss).

    ``method='p'`` integrates over prices, ``'a'`` over CV levels; they agree
    to rounding.  Vectorized over wealth ``y`` and covariate rows ``z``.
    """
    return _mean(params, split, y, z, scenario, pi0, pi1, intercept, ELIGIBLE, method)


def mean_cv_ineligible(params, split, y, z, scenario, pi0, pi1, intercept, method="p"):
    """E[S] for households above the wealth cutoff (positive = loss)."""
    return _mean(params, split, y, z, scenario, pi0, pi1, intercept, INELIGIBLE, method)


# ---------------------------------------------------------------------------
# Bounds and aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WelfareBounds:
    """Mean welfare gain (-E[S]) at alpha1 = 0, alpha/2 and alpha, plus the full curve."""

    lower: float
    symmetric: float
    upper: float
    curve: tuple


def _alpha1_grid(alpha, extra=None):
    pts = {0.0, alpha / 2.0, alpha}
    if extra is not None:
        pts.update(float(v) for v in extra if 0.0 <= v <= alpha)
    return sorted(pts)


def welfare_bounds(params, y, z, scenario, pi0, pi1, intercept, group,
                   alpha1_grid=None) -> WelfareBounds:
    """Average welfare gain of the given households over the alpha1 grid."""
    alpha = params.alpha
    if alpha == 0.0:
        m = _mean(params, spillover_split(0.0, 0.0), y, z, scenario, pi0, pi1, intercept,
                  group, "p")
        g = -float(np.mean(m))
        return WelfareBounds(g, g, g, ((0.0, g),))
    curve = []
    for a1 in _alpha1_grid(alpha, alpha1_grid):
        m = _mean(params, spillover_split(alpha, a1), y, z, scenario, pi0, pi1, intercept,
                  group, "p")
        curve.append((a1, -float(np.mean(m))))
    d = dict(curve)
    return WelfareBounds(d[0.0], d[alpha / 2.0], d[alpha], tuple(curve))


def _as_villages(data) -> list[Village]:
    if isinstance(data, Dataset):
        return list(data.villages)
    if isinstance(data, Village):
        return [data]
    return list(data)


def _lookup(values, villages):
    if isinstance(values, Mapping):
        return [float(values[v.id]) for v in villages]
    values = np.atleast_1d(np.asarray(values, float))
    if values.size != len(villages):
        raise ValueError("need one equilibrium value per village")
    return values.tolist()


def household_gains(village: Village, params, split, scenario, pi0, pi1) -> np.ndarray:
    """Mean welfare gain -E[S] of each participant household of ``village``."""
    v = village.participants()
    c = params.intercept_for(village.id)
    elig = scenario.eligible(v.wealth)
    out = np.zeros(v.n_rows)
    if elig.any():
        out[elig] = -np.atleast_1d(mean_cv_eligible(
            params, split, v.wealth[elig], v.covariates[elig], scenario, pi0, pi1, c))
    if (~elig).any():
        out[~elig] = -np.atleast_1d(mean_cv_ineligible(
            params, split, v.wealth[~elig], v.covariates[~elig], scenario, pi0, pi1, c))
    return out


def net_cv(data, params, split, scenario, pi0s, pi1s) -> float:
    """Net mean welfare gain of the policy, averaged over all participant households.

    Eligible households contribute their eligible gain and the rest their
    ineligible gain; villages are weighted by their household counts.
    """
    villages = _as_villages(data)
    p0s, p1s = _lookup(pi0s, villages), _lookup(pi1s, villages)
    total = 0.0
    n = 0
    for v, a, b in zip(villages, p0s, p1s):
        g = household_gains(v, params, split, scenario, a, b)
        total += g.sum()
        n += g.size
    return total / n


def subsidy_spending(data, params, scenario, pi1s) -> float:
    """Subsidy cost per household: (p0 - p1) times eligible buyers, divided by all participants."""
    villages = _as_villages(data)
    p1s = _lookup(pi1s, villages)
    total = 0.0
    n = 0
    for v, b in zip(villages, p1s):
        v = v.participants()
        elig = scenario.eligible(v.wealth)
        q = params.error.cdf(linear_index(params, scenario.p1, v.wealth, v.covariates,
                                          params.intercept_for(v.id)) + params.alpha * b)
        total += float(np.sum(q[elig]))
        n += v.n_rows
    return (scenario.p0 - scenario.p1) * total / n


def deadweight_loss(data, params, split, scenario, pi0s, pi1s) -> float:
    """Expected subsidy spending minus the net welfare gain.

    With ``params.alpha == 0`` this is the no-spillover deadweight loss:
    ineligible households are unaffected and beliefs drop out.
    """
    return (subsidy_spending(data, params, scenario, pi1s)
            - net_cv(data, params, split, scenario, pi0s, pi1s))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VillageWelfare:
    village_id: int
    n_households: int
    n_eligible: int
    pi0: float
    pi1: float
    eligible: WelfareBounds | None
    ineligible: WelfareBounds | None
    net: tuple           # (alpha1, net gain) per grid point
    spending: float


@dataclass(frozen=True)
class PolicyReport:
    scenario: PolicyScenario
    alpha1_grid: tuple
    villages: tuple
    net_curve: tuple      # (alpha1, net gain) pooled over villages
    net_lower: float
    net_symmetric: float
    net_upper: float
    spending: float
    dwl_lower: float
    dwl_upper: float

    @property
    def eligible_share(self) -> float:
        return sum(v.n_eligible for v in self.villages) / sum(v.n_households for v in self.villages)

    @property
    def pi0s(self) -> dict:
        return {v.village_id: v.pi0 for v in self.villages}

    @property
    def pi1s(self) -> dict:
        return {v.village_id: v.pi1 for v in self.villages}


def _village_welfare(v: Village, params, scenario, pi0, pi1, grid) -> VillageWelfare:
    v = v.participants()
    c = params.intercept_for(v.id)
    elig = scenario.eligible(v.wealth)
    ne = int(elig.sum())
    eb = ib = None
    if ne:
        eb = welfare_bounds(params, v.wealth[elig], v.covariates[elig], scenario,
                            pi0, pi1, c, ELIGIBLE, grid)
    if ne < v.n_rows:
        ib = welfare_bounds(params, v.wealth[~elig], v.covariates[~elig], scenario,
                            pi0, pi1, c, INELIGIBLE, grid)
    a1s = [a for a, _ in (eb or ib).curve]
    e_curve = dict(eb.curve) if eb else {}
    i_curve = dict(ib.curve) if ib else {}
    n = v.n_rows
    net = tuple((a, (ne * e_curve.get(a, 0.0) + (n - ne) * i_curve.get(a, 0.0)) / n) for a in a1s)
    spend = subsidy_spending([v], params, scenario, [pi1])
    return VillageWelfare(v.id, n, ne, float(pi0), float(pi1), eb, ib, net, spend)


def policy_report(data, params: IndexParams, scenario: PolicyScenario, alpha1_grid=None,
                  pi0s=None, pi1s=None) -> PolicyReport:
    """Solve equilibria (unless given) and compute welfare bounds and DWL for every village."""
    villages = _as_villages(data)
    if pi0s is None:
        pi0s = [solve_pi_baseline(v, params, scenario.p0).value for v in villages]
    if pi1s is None:
        pi1s = [solve_pi_policy(v, params, scenario).value for v in villages]
    p0s, p1s = _lookup(pi0s, villages), _lookup(pi1s, villages)
    grid = _alpha1_grid(params.alpha, alpha1_grid) if params.alpha > 0 else [0.0]
    rows = tuple(_village_welfare(v, params, scenario, a, b, alpha1_grid)
                 for v, a, b in zip(villages, p0s, p1s))
    n_tot = sum(r.n_households for r in rows)
    net_curve = []
    for j, a1 in enumerate(grid):
        net_curve.append((a1, sum(r.n_households * r.net[j][1] for r in rows) / n_tot))
    spending = sum(r.n_households * r.spending for r in rows) / n_tot
    d = dict(net_curve)
    lo, sym, up = d[0.0], d[params.alpha / 2.0], d[params.alpha]
    # consistency of the household-weighted decomposition
    check = sum(
        (r.n_eligible * (dict(r.eligible.curve)[a1] if r.eligible else 0.0)
         + (r.n_households - r.n_eligible) * (dict(r.ineligible.curve)[a1] if r.ineligible else 0.0))
        for r in rows for a1 in [params.alpha / 2.0]) / n_tot
    assert abs(check - sym) <= 1e-9 * max(1.0, abs(sym)), "net welfare decomposition mismatch"
    return PolicyReport(scenario, tuple(grid), rows, tuple(net_curve), lo, sym, up, spending,
                        spending - max(lo, up), spending - min(lo, up))


def comparative_statics(data, params: IndexParams, scenario_template: PolicyScenario,
                        eligibility_shares: Sequence[float], alpha1_grid=None,
                        no_spillover_params: IndexParams | None = None) -> list[dict]:
    """Vary the wealth cutoff so that the given shares of households are eligible.

    Returns one row per share with take-up, welfare bounds and DWL.  When
    ``no_spillover_params`` is given, each row also carries the take-up and
    DWL predicted by that model.
    """
    villages = [v.participants() for v in _as_villages(data)]
    wealth = np.concatenate([v.wealth for v in villages])
    n = wealth.size
    rows = []
    for share in eligibility_shares:
        if not 0.0 <= share < 1.0:
            raise ValueError("eligibility shares must lie in [0, 1)")
        tau = -np.inf if share == 0 else float(np.quantile(wealth, share, method="inverted_cdf"))
        sc = PolicyScenario(scenario_template.p0, scenario_template.p1, tau)
        rep = policy_report(villages, params, sc, alpha1_grid)
        weights = np.array([v.n_households for v in rep.villages], float)
        row = {
            "share": float(share),
            "tau": tau,
            "eligible_share": rep.eligible_share,
            "pi0": float(np.dot(weights, [v.pi0 for v in rep.villages]) / n),
            "pi1": float(np.dot(weights, [v.pi1 for v in rep.villages]) / n),
            "eligible_gain_lower": _pooled(rep, "eligible", "lower"),
            "eligible_gain_symmetric": _pooled(rep, "eligible", "symmetric"),
            "eligible_gain_upper": _pooled(rep, "eligible", "upper"),
            "ineligible_gain_lower": _pooled(rep, "ineligible", "lower"),
            "ineligible_gain_symmetric": _pooled(rep, "ineligible", "symmetric"),
            "ineligible_gain_upper": _pooled(rep, "ineligible", "upper"),
            "net_gain_lower": rep.net_lower,
            "net_gain_symmetric": rep.net_symmetric,
            "net_gain_upper": rep.net_upper,
            "spending": rep.spending,
            "dwl_lower": rep.dwl_lower,
            "dwl_upper": rep.dwl_upper,
        }
        if no_spillover_params is not None:
            ns = policy_report(villages, no_spillover_params, sc)
            row["pi1_no_spillover"] = float(
                np.dot(weights, [v.pi1 for v in ns.villages]) / n)
            row["net_gain_no_spillover"] = ns.net_symmetric
            row["dwl_no_spillover"] = ns.dwl_lower
        rows.append(row)
    return rows


def _pooled(rep: PolicyReport, group: str, which: str) -> float:
    """Household-weighted mean across villages of one group's bound (0 if the group is empty)."""
    num = den = 0.0
    for v in rep.villages:
        b = getattr(v, group)
        k = v.n_eligible if group == "eligible" else v.n_households - v.n_eligible
        if b is not None and k:
            num += k * getattr(b, which)
            den += k
    return num / den if den else 0.0
