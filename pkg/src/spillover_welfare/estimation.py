"""Maximum likelihood estimation of the linear-index parameters.

Three estimators share one Newton engine:

* ``fit_br``  - binary MLE with the observed village take-up rate as a
  regressor.  With village dummies the take-up rate is collinear and the
  social coefficient is recovered afterwards from a pair of villages assumed
  to share the same unobserved effect.
* ``fit_cre`` - probit with village means of the regressors added
  (correlated random effects).
* ``fit_fpl`` - MLE in which each village's belief is the model-implied
  take-up fixed point at the current parameters, re-solved at every
  evaluation and differentiated implicitly.

All estimation uses participant rows only.  Regressors are centred and
scaled internally; reported coefficients are on the original scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .equilibrium import contraction_bound
from .errors import IdentificationError, InputError, NumericalError, SolverError
from .model import (LOGIT, CommonIntercept, Dataset, ErrorDist, IndexParams,
                    VillageIntercepts, participation_scale)

__all__ = [
    "FitSpec",
    "FitResult",
    "IndexFit",
    "estimate_village_beliefs",
    "index_loglik_terms",
    "fit_index_mle",
    "fit_br",
    "fit_cre",
    "fit_fpl",
    "fit",
    "solve_fixed_effects_homogeneity",
    "standard_errors",
    "FplObjective",
    "SEPARATION_LIMIT",
    "GRADIENT_TOL",
]

SEPARATION_LIMIT = 50.0
GRADIENT_TOL = 1e-6
ESTIMATORS = ("BR", "FPL", "CRE")
SCHEMES = ("none", "dummies", "cre")


@dataclass(frozen=True)
class FitSpec:
    """What to estimate and how.

    ``fixed_effects`` is 'none' (single intercept), 'dummies' (one intercept
    per village, with ``tied`` naming two villages assumed to share the same
    unobserved effect, or ``alpha_fixed`` supplying the social coefficient
    externally) or 'cre'.  ``covariates`` selects dataset covariates by name
    (None keeps all).  ``scale_beliefs`` multiplies observed take-up by the
    participation ratio of each village.
    """

    estimator: str = "BR"
    error: ErrorDist = LOGIT
    fixed_effects: str = "none"
    tied: tuple | None = None
    include_belief_regressor: bool = True
    covariates: tuple | None = None
    scale_beliefs: bool = True
    alpha_fixed: float | None = None

    def __post_init__(self):
        est = str(self.estimator).upper()
        object.__setattr__(self, "estimator", est)
        object.__setattr__(self, "error", ErrorDist.parse(self.error))
        fe = str(self.fixed_effects).lower()
        object.__setattr__(self, "fixed_effects", fe)
        if est not in ESTIMATORS:
            raise InputError(f"unknown estimator {self.estimator!r}")
        if fe not in SCHEMES:
            raise InputError(f"unknown fixed-effect scheme {self.fixed_effects!r}")
        if self.tied is not None:
            t = tuple(int(v) for v in self.tied)
            if len(t) != 2 or t[0] == t[1]:
                raise InputError("tied must name two distinct villages")
            object.__setattr__(self, "tied", t)
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))
        if est == "BR" and fe == "dummies" and self.tied is None and self.alpha_fixed is None \
                and self.include_belief_regressor:
            raise InputError("village dummies need a tied village pair or alpha_fixed")
        if est == "CRE" and fe not in ("cre", "none"):
            raise InputError("CRE estimator uses the 'cre' scheme")
        if fe == "cre" and est != "CRE":
            raise InputError("the 'cre' scheme is only available with the CRE estimator")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: IndexParams
    loglik: float
    gradient_norm: float
    std_errors: np.ndarray
    converged: bool
    village_intercepts: dict
    param_names: tuple = ()
    estimates: np.ndarray = field(default=None, repr=False)
    cov: np.ndarray = field(default=None, repr=False)
    hessian: np.ndarray = field(default=None, repr=False)
    jacobian: np.ndarray = field(default=None, repr=False)
    beliefs: dict = field(default_factory=dict)
    gammas: dict = field(default_factory=dict)
    estimator: str = "BR"
    n_obs: int = 0
    iterations: int = 0
    separated: bool = False
    boundary: bool = False
    message: str = ""

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.param_names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.param_names.index(name)])

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.param_names, self.estimates)}


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------


def estimate_village_beliefs(dataset: Dataset, scale: bool = True) -> dict:
    """Observed take-up among participants, times the participation ratio when ``scale``."""
    out = {}
    for v in dataset.villages:
        m = v.participant
        if not m.any():
            raise InputError(f"village {v.id} has no participants")
        mean = float(np.mean(v.outcome[m]))
        s = participation_scale(v) if (scale and v.total_households > 1) else 1.0
        out[v.id] = s * mean
    return out


def belief_scales(dataset: Dataset, scale: bool = True) -> dict:
    return {v.id: (participation_scale(v) if (scale and v.total_households > 1) else 1.0)
            for v in dataset.villages}


@dataclass
class _Pooled:
    village_ids: list
    vidx: np.ndarray
    price: np.ndarray
    wealth: np.ndarray
    cov: np.ndarray
    cov_names: tuple
    outcome: np.ndarray

    @property
    def slopes(self):
        return np.column_stack([self.price, self.wealth, self.cov])

    @property
    def slope_names(self):
        return ("c1", "c2") + tuple(f"c3[{n}]" for n in self.cov_names)


def _pool(dataset: Dataset, covariates) -> _Pooled:
    names = dataset.covariate_names
    if covariates is None:
        cols = list(range(len(names)))
    else:
        missing = [c for c in covariates if c not in names]
        if missing:
            raise InputError(f"unknown covariates {missing}")
        cols = [names.index(c) for c in covariates]
    parts = [v.participants() for v in dataset.villages]
    return _Pooled(
        [v.id for v in parts],
        np.concatenate([np.full(v.n_rows, i) for i, v in enumerate(parts)]),
        np.concatenate([v.price for v in parts]),
        np.concatenate([v.wealth for v in parts]),
        np.concatenate([v.covariates[:, cols] for v in parts]),
        tuple(names[c] for c in cols),
        np.concatenate([v.outcome for v in parts]).astype(float),
    )


# ---------------------------------------------------------------------------
# Index likelihood and Newton engine
# ---------------------------------------------------------------------------


def index_loglik_terms(error: ErrorDist, z, a):
    """Per-observation log-likelihood, dl/dz and d2l/dz2 for outcome a at index z."""
    z = np.asarray(z, float)
    a = np.asarray(a, float)
    lf = error.logcdf(z)
    ls = error.logsf(z)
    ll = a * lf + (1.0 - a) * ls
    if error.kind == "logit":
        F = np.exp(lf)
        return ll, a - F, -F * (1.0 - F)
    logpdf = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
    r1 = np.exp(logpdf - lf)     # f / F
    r0 = np.exp(logpdf - ls)     # f / (1 - F)
    score = a * r1 - (1.0 - a) * r0
    hess = a * (-z * r1 - r1 * r1) + (1.0 - a) * (z * r0 - r0 * r0)
    return ll, score, hess


@dataclass
class IndexFit:
    coef: np.ndarray          # original scale
    coef_std: np.ndarray
    hessian_std: np.ndarray   # of the summed log-likelihood, standardized coordinates
    transform: np.ndarray     # coef = transform @ coef_std
    loglik: float
    gradient_norm: float
    converged: bool
    separated: bool
    iterations: int


def _standardizer(X, const_cols):
    """Matrix T with X_std = X @ inv(T).T ... returned as (X_std, T) where coef = T @ coef_std."""
    n, k = X.shape
    const = np.zeros(k, bool)
    const[list(const_cols)] = True
    has_const = const.any()
    mean = np.where(const | (not has_const), 0.0, X.mean(axis=0))
    sd = X.std(axis=0)
    sd = np.where(const | (sd == 0), 1.0, sd)
    if not has_const:
        mean[:] = 0.0
    Xs = (X - mean) / sd
    T = np.diag(1.0 / sd)
    if has_const:
        for j in np.flatnonzero(~const):
            T[const, j] = -mean[j] / sd[j]
    return Xs, T


def _rank_check(Xs, names):
    s, v = np.linalg.svd(Xs, full_matrices=False)[1:]
    tol = s[0] * max(Xs.shape) * 1e-12
    null = v[s <= tol]
    if len(null):
        bad = sorted({names[j] for row in null for j in np.flatnonzero(np.abs(row) > 1e-6)})
        raise InputError(f"design matrix is rank deficient; collinear columns: {bad}")


def fit_index_mle(X, a, error: ErrorDist, names, const_cols=(), start=None,
                  max_iter=200, tol=GRADIENT_TOL) -> IndexFit:
    """Newton ascent with backtracking for a binary index model P(a=1) = F(X b)."""
    X = np.asarray(X, float)
    a = np.asarray(a, float)
    n, k = X.shape
    Xs, T = _standardizer(X, const_cols)
    _rank_check(Xs, list(names))
    b = np.zeros(k) if start is None else np.linalg.solve(T, np.asarray(start, float))

    def evaluate(beta):
        ll, s, h = index_loglik_terms(error, Xs @ beta, a)
        return ll.sum(), Xs.T @ s, (Xs * h[:, None]).T @ Xs

    ll, g, H = evaluate(b)
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = np.linalg.norm(g) / n
        if gnorm < tol * 1e-3:
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H + 1e-8 * np.eye(k), g, rcond=None)[0]
        t = 1.0
        while True:
            cand = b + t * step
            ll_c, g_c, H_c = evaluate(cand)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        improved = ll_c - ll
        b, ll, g, H = cand, ll_c, g_c, H_c
        if np.max(np.abs(b)) > SEPARATION_LIMIT:
            separated = True
            break
        if abs(improved) < 1e-14 * max(1.0, abs(ll)) and np.linalg.norm(g) / n < tol:
            break
    gnorm = float(np.linalg.norm(g) / n)
    return IndexFit(T @ b, b, H, T, float(ll), gnorm,
                    (gnorm < tol) and not separated, separated, it)


# ---------------------------------------------------------------------------
# Fixed-effect identification
# ---------------------------------------------------------------------------


def solve_fixed_effects_homogeneity(gammas: dict, pis: dict, tied) -> tuple[float, dict]:
    """alpha from the tied pair, then xi_bar_v = gamma_v - alpha pi_v for every village."""
    a, b = tied
    for v in (a, b):
        if v not in gammas or v not in pis:
            raise InputError(f"tied village {v} not in the data")
    dpi = pis[a] - pis[b]
    if abs(dpi) < 1e-8:
        raise IdentificationError(
            f"tied villages {a} and {b} have take-up {pis[a]:.6g} and {pis[b]:.6g}; "
            "the social coefficient is not identified")
    alpha = (gammas[a] - gammas[b]) / dpi
    return alpha, {v: gammas[v] - alpha * pis[v] for v in gammas}


def standard_errors(fit: FitResult) -> np.ndarray:
    """Square roots of the diagonal of the inverse negative Hessian, mapped to reported parameters."""
    return np.sqrt(np.clip(np.diag(_covariance(fit.hessian, fit.jacobian)), 0.0, None))


def _covariance(H, J):
    neg = -0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(neg)
    if eig[0] <= 0:
        raise NumericalError(
            f"negative Hessian is not positive definite (smallest eigenvalue {eig[0]:.3e})")
    cov_std = np.linalg.inv(neg)
    return J @ cov_std @ J.T


def _finish(fit: IndexFit, J2, names, params, spec, n, beliefs, intercepts, gammas=None,
            message="") -> FitResult:
    J = J2 @ fit.transform
    est = J2 @ fit.coef if J2.shape[1] == fit.coef.shape[0] else None
    try:
        cov = _covariance(fit.hessian_std, J)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except NumericalError:
        if fit.converged:
            raise
        cov = np.full((J.shape[0],) * 2, np.nan)
        se = np.full(J.shape[0], np.nan)
    return FitResult(params, fit.loglik, fit.gradient_norm, se, fit.converged, intercepts,
                     tuple(names), est, cov, fit.hessian_std, J, beliefs, gammas or {},
                     spec.estimator, n, fit.iterations, fit.separated, False, message)


def _check_converged(fit: IndexFit, what: str):
    if not fit.converged and not fit.separated:
        raise SolverError(f"{what}: Newton ascent stopped with gradient norm "
                          f"{fit.gradient_norm:.3e}", last_value=fit.gradient_norm)


# ---------------------------------------------------------------------------
# BR
# ---------------------------------------------------------------------------


def fit_br(dataset: Dataset, spec: FitSpec) -> FitResult:
    """Binary MLE with observed take-up as a regressor (or village dummies)."""
    pool = _pool(dataset, spec.covariates)
    pis = estimate_village_beliefs(dataset, spec.scale_beliefs)
    pi_h = np.array([pis[vid] for vid in pool.village_ids])[pool.vidx]
    S = pool.slopes
    ks = S.shape[1]
    n = S.shape[0]
    V = len(pool.village_ids)

    if spec.fixed_effects == "dummies":
        D = np.zeros((n, V))
        D[np.arange(n), pool.vidx] = 1.0
        X = np.column_stack([S, D])
        raw_names = list(pool.slope_names) + [f"gamma[{v}]" for v in pool.village_ids]
        fit = fit_index_mle(X, pool.outcome, spec.error, raw_names,
                            const_cols=range(ks, ks + V))
        _check_converged(fit, "BR with village dummies")
        slopes = fit.coef[:ks]
        gam = {vid: float(fit.coef[ks + i]) for i, vid in enumerate(pool.village_ids)}
        if spec.alpha_fixed is not None or not spec.include_belief_regressor:
            alpha = 0.0 if not spec.include_belief_regressor else float(spec.alpha_fixed)
            jrow = np.zeros(ks + V)
        else:
            alpha, _ = solve_fixed_effects_homogeneity(gam, pis, spec.tied)
            a, b = spec.tied
            ia, ib = pool.village_ids.index(a), pool.village_ids.index(b)
            jrow = np.zeros(ks + V)
            jrow[ks + ia] = 1.0 / (pis[a] - pis[b])
            jrow[ks + ib] = -1.0 / (pis[a] - pis[b])
        xi = {vid: gam[vid] - alpha * pis[vid] for vid in pool.village_ids}
        # reported: slopes, alpha, xi_bar per village
        J2 = np.zeros((ks + 1 + V, ks + V))
        J2[:ks, :ks] = np.eye(ks)
        J2[ks] = jrow
        for i, vid in enumerate(pool.village_ids):
            J2[ks + 1 + i, ks + i] = 1.0
            J2[ks + 1 + i] -= pis[vid] * jrow
        names = list(pool.slope_names) + ["alpha"] + [f"xi_bar[{v}]" for v in pool.village_ids]
        params = IndexParams(slopes[0], slopes[1], tuple(slopes[2:]), alpha,
                             VillageIntercepts(xi), spec.error)
        res = _finish(fit, J2, names, params, spec, n, pis, xi, gam)
        est = np.concatenate([slopes, [alpha], [xi[v] for v in pool.village_ids]])
        return _replace(res, estimates=est)

    cols = [np.ones(n), S]
    names = ["c0"] + list(pool.slope_names)
    if spec.include_belief_regressor:
        cols.append(pi_h)
        names.append("alpha")
    X = np.column_stack(cols)
    fit = fit_index_mle(X, pool.outcome, spec.error, names, const_cols=[0])
    _check_converged(fit, "BR")
    c = fit.coef
    alpha = float(c[-1]) if spec.include_belief_regressor else 0.0
    params = IndexParams(c[1], c[2], tuple(c[3:3 + ks - 2]), alpha, CommonIntercept(c[0]),
                         spec.error)
    J2 = np.eye(len(names))
    res = _finish(fit, J2, names, params, spec, n, pis, {v: float(c[0]) for v in pool.village_ids},
                  message="separation detected" if fit.separated else "")
    return res


def _replace(res: FitResult, **kw) -> FitResult:
    from dataclasses import replace
    return replace(res, **kw)


# ---------------------------------------------------------------------------
# CRE
# ---------------------------------------------------------------------------


def fit_cre(dataset: Dataset, spec: FitSpec) -> FitResult:
    """Probit (by default) with village means of price, wealth and covariates as extra regressors."""
    pool = _pool(dataset, spec.covariates)
    pis = estimate_village_beliefs(dataset, spec.scale_beliefs)
    S = pool.slopes
    ks = S.shape[1]
    n = S.shape[0]
    V = len(pool.village_ids)
    counts = np.bincount(pool.vidx, minlength=V).astype(float)
    means = np.column_stack([np.bincount(pool.vidx, S[:, j], V) / counts for j in range(ks)])
    keep = [j for j in range(ks)
            if means[:, j].std() > 1e-12 * (1.0 + abs(means[:, j].mean()))]
    mean_names = [f"mean[{nm}]" for nm in np.array(pool.slope_names)[keep]]
    cols = [np.ones(n), S, means[pool.vidx][:, keep]]
    names = ["c0"] + list(pool.slope_names) + mean_names
    if spec.include_belief_regressor:
        cols.append(np.array([pis[v] for v in pool.village_ids])[pool.vidx])
        names.append("alpha")
    X = np.column_stack(cols)
    fit = fit_index_mle(X, pool.outcome, spec.error, names, const_cols=[0])
    _check_converged(fit, "CRE")
    c = fit.coef
    delta = c[1 + ks:1 + ks + len(keep)]
    alpha = float(c[-1]) if spec.include_belief_regressor else 0.0
    xi = {vid: float(c[0] + means[i, keep] @ delta) for i, vid in enumerate(pool.village_ids)}
    params = IndexParams(c[1], c[2], tuple(c[3:1 + ks]), alpha, VillageIntercepts(xi), spec.error)
    return _finish(fit, np.eye(len(names)), names, params, spec, n, pis, xi)


# ---------------------------------------------------------------------------
# FPL
# ---------------------------------------------------------------------------


class FplObjective:
    """Log-likelihood with beliefs equal to the model's own take-up fixed point.

    Parameters (standardized coordinates): slopes on the centred and scaled
    regressors, one intercept per intercept group, then alpha.  Intercept
    groups are a single common intercept, or one per village with the tied
    pair merged.
    """

    def __init__(self, dataset: Dataset, spec: FitSpec):
        pool = _pool(dataset, spec.covariates)
        self.pool = pool
        self.error = spec.error
        self.village_ids = pool.village_ids
        V = len(pool.village_ids)
        S = pool.slopes
        self.mean = S.mean(axis=0)
        self.sd = np.where(S.std(axis=0) > 0, S.std(axis=0), 1.0)
        self.Xs = (S - self.mean) / self.sd
        self.ks = S.shape[1]
        self.vidx = pool.vidx
        self.a = pool.outcome
        self.counts = np.bincount(self.vidx, minlength=V).astype(float)
        sc = belief_scales(dataset, spec.scale_beliefs)
        self.scale = np.array([sc[v] for v in pool.village_ids])
        if spec.fixed_effects == "dummies":
            group = list(range(V))
            if spec.tied is not None:
                ia = pool.village_ids.index(spec.tied[0])
                ib = pool.village_ids.index(spec.tied[1])
                group = [g if g != ib else ia for g in group]
            uniq = sorted(set(group))
            self.group_of_village = np.array([uniq.index(g) for g in group])
            self.group_names = [
                "xi_bar[" + "=".join(str(pool.village_ids[v]) for v in range(V)
                                     if group[v] == g) + "]" for g in uniq]
        else:
            self.group_of_village = np.zeros(V, int)
            self.group_names = ["c0"]
        self.G = len(set(self.group_of_village.tolist()))
        self.k = self.ks + self.G + 1
        self.alpha_max = contraction_bound(self.error) - 1e-6
        self.n = len(self.a)
        self.last_pi = np.full(V, 0.5)
        self.last_residual = np.inf

    # parameter maps ------------------------------------------------------
    def to_raw(self, theta):
        """(slopes, group intercepts, alpha) on the original regressor scale."""
        b = theta[:self.ks]
        slopes = b / self.sd
        ints = theta[self.ks:self.ks + self.G] - np.dot(b, self.mean / self.sd)
        return slopes, ints, theta[-1]

    def raw_jacobian(self):
        J = np.zeros((self.k, self.k))
        J[:self.ks, :self.ks] = np.diag(1.0 / self.sd)
        for g in range(self.G):
            J[self.ks + g, self.ks + g] = 1.0
            J[self.ks + g, :self.ks] = -self.mean / self.sd
        J[-1, -1] = 1.0
        return J

    def from_raw(self, slopes, ints, alpha):
        b = np.asarray(slopes) * self.sd
        return np.concatenate([b, np.asarray(ints) + np.dot(b, self.mean / self.sd), [alpha]])

    # inner fixed point ---------------------------------------------------
    def beliefs(self, theta, tol=1e-14):
        base = self.Xs @ theta[:self.ks] + theta[self.ks:self.ks + self.G][
            self.group_of_village[self.vidx]]
        alpha = theta[-1]
        pi = np.clip(self.last_pi, 0.0, 1.0).copy()
        lo = np.zeros_like(pi)
        hi = np.ones_like(pi)
        for _ in range(200):
            z = base + alpha * pi[self.vidx]
            m = self.scale * np.bincount(self.vidx, self.error.cdf(z), len(pi)) / self.counts
            r = pi - m
            if np.max(np.abs(r)) < tol:
                break
            dm = self.scale * alpha * np.bincount(self.vidx, self.error.pdf(z), len(pi)) / self.counts
            lo = np.where(r < 0, pi, lo)
            hi = np.where(r > 0, pi, hi)
            new = pi - r / (1.0 - dm)
            bad = (new <= lo) | (new >= hi) | ~np.isfinite(new)
            pi = np.where(bad, 0.5 * (lo + hi), new)
        else:
            raise SolverError("inner take-up fixed point did not converge",
                              last_value=float(np.max(np.abs(r))))
        self.last_pi = pi
        self.last_residual = float(np.max(np.abs(r)))
        return pi, base

    # likelihood ----------------------------------------------------------
    def loglik(self, theta) -> float:
        pi, base = self.beliefs(np.asarray(theta, float))
        ll, _, _ = index_loglik_terms(self.error, base + theta[-1] * pi[self.vidx], self.a)
        return float(ll.sum())

    def loglik_and_score(self, theta):
        theta = np.asarray(theta, float)
        pi, base = self.beliefs(theta)
        alpha = theta[-1]
        V = len(pi)
        z = base + alpha * pi[self.vidx]
        ll, lam, _ = index_loglik_terms(self.error, z, self.a)
        f = self.error.pdf(z)
        # direct derivatives of the index (excluding the belief channel)
        D = np.zeros((self.n, self.k))
        D[:, :self.ks] = self.Xs
        D[np.arange(self.n), self.ks + self.group_of_village[self.vidx]] = 1.0
        D[:, -1] = pi[self.vidx]
        mean_fD = np.zeros((V, self.k))
        for j in range(self.k):
            mean_fD[:, j] = np.bincount(self.vidx, f * D[:, j], V) / self.counts
        mean_f = np.bincount(self.vidx, f, V) / self.counts
        dpi = (self.scale[:, None] * mean_fD) / (1.0 - self.scale * alpha * mean_f)[:, None]
        lam_v = np.bincount(self.vidx, lam, V)
        score = D.T @ lam + alpha * (lam_v @ dpi)
        return float(ll.sum()), score


def _numeric_hessian(fun_grad, x, step=1e-5):
    k = len(x)
    H = np.zeros((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        H[:, j] = (fun_grad(x + e)[1] - fun_grad(x - e)[1]) / (2 * step)
    return 0.5 * (H + H.T)


def fit_fpl(dataset: Dataset, spec: FitSpec, start: IndexParams | None = None) -> FitResult:
    """Nested fixed-point MLE; alpha is boxed inside the contraction region."""
    if spec.fixed_effects == "cre":
        raise InputError("FPL supports the 'none' and 'dummies' schemes")
    if not spec.include_belief_regressor:
        # beliefs drop out of the likelihood: identical to the index model without them
        br = fit_br(dataset, FitSpec("BR", spec.error, "none" if spec.fixed_effects == "none"
                                     else "dummies", spec.tied, False, spec.covariates,
                                     spec.scale_beliefs))
        return _replace(br, estimator="FPL")
    if spec.fixed_effects == "dummies" and spec.tied is None:
        raise InputError("FPL with village dummies needs a tied village pair; "
                         "free village effects leave alpha unidentified")
    obj = FplObjective(dataset, spec)
    if start is None:
        br_spec = FitSpec("BR", spec.error, spec.fixed_effects, spec.tied, True,
                          spec.covariates, spec.scale_beliefs)
        start = fit_br(dataset, br_spec).params
    slopes = np.array([start.c1, start.c2, *start.c3])
    if spec.fixed_effects == "dummies":
        ints = [np.mean([start.intercept_for(obj.village_ids[v])
                         for v in np.flatnonzero(obj.group_of_village == g)])
                for g in range(obj.G)]
    else:
        ints = [start.intercept_for(obj.village_ids[0])]
    alpha0 = float(np.clip(start.alpha, 0.0, obj.alpha_max))
    x0 = obj.from_raw(slopes, ints, alpha0)
    n = obj.n

    def negf(x):
        ll, g = obj.loglik_and_score(x)
        return -ll / n, -g / n

    bounds = [(None, None)] * (obj.k - 1) + [(0.0, obj.alpha_max)]
    res = optimize.minimize(negf, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options=dict(maxiter=2000, ftol=1e-16, gtol=1e-11))
    x = res.x
    # Newton polish on the numerical Hessian of the analytic score
    fg = lambda t: obj.loglik_and_score(t)  # noqa: E731
    ll, g = fg(x)
    it = res.nit
    for _ in range(30):
        free = np.ones(obj.k, bool)
        at_lo = x[-1] <= 0.0 and g[-1] < 0
        at_hi = x[-1] >= obj.alpha_max and g[-1] > 0
        if at_lo or at_hi:
            free[-1] = False
        if np.linalg.norm(g[free]) / n < 1e-10:
            break
        H = _numeric_hessian(fg, x)
        step = np.zeros(obj.k)
        try:
            step[free] = np.linalg.solve(-H[np.ix_(free, free)], g[free])
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            cand = x + t * step
            cand[-1] = np.clip(cand[-1], 0.0, obj.alpha_max)
            ll_c, g_c = fg(cand)
            if ll_c >= ll - 1e-13 * abs(ll):
                break
            t *= 0.5
        x, ll, g = cand, ll_c, g_c
        it += 1
    boundary = bool(x[-1] <= 0.0 and g[-1] < 0) or bool(x[-1] >= obj.alpha_max and g[-1] > 0)
    free = np.ones(obj.k, bool)
    if boundary:
        free[-1] = False
    gnorm = float(np.linalg.norm(g[free]) / n)
    H = _numeric_hessian(fg, x)
    obj.beliefs(x)

    slopes, ints, alpha = obj.to_raw(x)
    Jraw = obj.raw_jacobian()
    V = len(obj.village_ids)
    xi = {vid: float(ints[obj.group_of_village[i]]) for i, vid in enumerate(obj.village_ids)}
    if spec.fixed_effects == "dummies":
        names = list(obj.pool.slope_names) + ["alpha"] + [f"xi_bar[{v}]" for v in obj.village_ids]
        # raw order: slopes, groups, alpha -> reported: slopes, alpha, per-village xi
        P = np.zeros((obj.ks + 1 + V, obj.k))
        P[:obj.ks, :obj.ks] = np.eye(obj.ks)
        P[obj.ks, -1] = 1.0
        for i in range(V):
            P[obj.ks + 1 + i, obj.ks + obj.group_of_village[i]] = 1.0
        intercepts = VillageIntercepts(xi)
        est = np.concatenate([slopes, [alpha], [xi[v] for v in obj.village_ids]])
    else:
        names = ["c0"] + list(obj.pool.slope_names) + ["alpha"]
        P = np.zeros((obj.k, obj.k))
        P[0, obj.ks] = 1.0
        P[1:obj.ks + 1, :obj.ks] = np.eye(obj.ks)
        P[-1, -1] = 1.0
        intercepts = CommonIntercept(float(ints[0]))
        est = np.concatenate([[ints[0]], slopes, [alpha]])
    J = P @ Jraw
    params = IndexParams(slopes[0], slopes[1], tuple(slopes[2:]), float(alpha), intercepts,
                         spec.error)
    Hfree = H if not boundary else H[np.ix_(free, free)]
    Jfree = J if not boundary else J[:, free]
    cov = _covariance(Hfree, Jfree)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    converged = gnorm < GRADIENT_TOL and obj.last_residual < 1e-12
    beliefs = {vid: float(obj.last_pi[i]) for i, vid in enumerate(obj.village_ids)}
    return FitResult(params, float(ll), gnorm, se, converged, xi, tuple(names), est, cov,
                     Hfree, Jfree, beliefs, {}, "FPL", n, it, False, boundary,
                     "alpha at the contraction box boundary" if boundary else "")


def fit(dataset: Dataset, spec: FitSpec) -> FitResult:
    if spec.estimator == "BR":
        return fit_br(dataset, spec)
    if spec.estimator == "CRE":
        return fit_cre(dataset, spec)
    return fit_fpl(dataset, spec)
