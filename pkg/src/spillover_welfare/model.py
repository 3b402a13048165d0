"""Domain types, the structural choice probability and parameter transforms.

Conventions
-----------
The linear index of household h in village v is

    intercept_v + c1 * price + c2 * wealth + c3 . z + alpha * pi

and the probability of buying is F(index), with F the logistic or standard
normal CDF.  The utility parameters behind the index are beta1 = -c1 (the
marginal utility of income when buying) and beta0 = -c1 - c2 (when not).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy import special

from .errors import InputError, WelfarePreconditionError

__all__ = [
    "Household",
    "Village",
    "Dataset",
    "ErrorDist",
    "LOGIT",
    "PROBIT",
    "CommonIntercept",
    "VillageIntercepts",
    "IndexParams",
    "SpilloverSplit",
    "PolicyScenario",
    "demand_probability",
    "linear_index",
    "structural_betas",
    "coefficients_from_betas",
    "spillover_split",
    "participation_scale",
]


# ---------------------------------------------------------------------------
# Error distributions
# ---------------------------------------------------------------------------

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ErrorDist:
    """Distribution of the latent utility difference. ``kind`` is 'logit' or 'probit'."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("logit", "probit"):
            raise InputError(f"unknown error distribution {self.kind!r}")

    @classmethod
    def parse(cls, value) -> "ErrorDist":
        if isinstance(value, ErrorDist):
            return value
        return cls(str(value).strip().lower())

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.expit(x) if self.kind == "logit" else special.ndtr(x)

    def sf(self, x):
        """1 - F(x), computed without cancellation."""
        x = np.asarray(x, dtype=float)
        return special.expit(-x) if self.kind == "logit" else special.ndtr(-x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            e = special.expit(x)
            return e * (1.0 - e)
        return np.exp(-0.5 * x * x) / _SQRT_2PI

    def dpdf(self, x):
        """Derivative of the density."""
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            e = special.expit(x)
            return e * (1.0 - e) * (1.0 - 2.0 * e)
        return -x * np.exp(-0.5 * x * x) / _SQRT_2PI

    def logcdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            return -np.logaddexp(0.0, -x)
        return special.log_ndtr(x)

    def logsf(self, x):
        return self.logcdf(-np.asarray(x, dtype=float))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return special.logit(u) if self.kind == "logit" else special.ndtri(u)

    @property
    def sup_density(self) -> float:
        return 0.25 if self.kind == "logit" else 1.0 / _SQRT_2PI

    def sample(self, rng: np.random.Generator, size):
        if self.kind == "logit":
            return rng.logistic(size=size)
        return rng.standard_normal(size)


LOGIT = ErrorDist("logit")
PROBIT = ErrorDist("probit")


# ---------------------------------------------------------------------------
# Households, villages, datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Household:
    id: int
    village_id: int
    price: float
    wealth: float
    covariates: tuple = ()
    location: tuple | None = None
    outcome: int = 0
    participant: bool = True

    def __post_init__(self):
        if not self.price >= 0:
            raise InputError(f"household {self.id}: negative price {self.price}")
        if not self.wealth >= 0:
            raise InputError(f"household {self.id}: negative wealth {self.wealth}")
        if self.outcome not in (0, 1):
            raise InputError(f"household {self.id}: outcome must be 0 or 1")


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Village:
    """Households of one village, stored column-wise.

    ``total_households`` counts every village member including those outside
    the experiment; it defaults to the number of rows.  Rows flagged as
    non-participants are carried along but ignored by estimation and by the
    equilibrium solvers.
    """

    __slots__ = (
        "id", "household_ids", "price", "wealth", "covariates", "location",
        "outcome", "participant", "total_households", "xi_bar", "belief_hat",
    )

    def __init__(self, id, household_ids, price, wealth, covariates=None,
                 location=None, outcome=None, participant=None,
                 total_households=None, xi_bar=None, belief_hat=None):
        n = len(price)
        if n == 0:
            raise InputError(f"village {id} has no households")
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "household_ids", _frozen(household_ids, np.int64))
        object.__setattr__(self, "price", _frozen(price, float))
        object.__setattr__(self, "wealth", _frozen(wealth, float))
        cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, float)
        if cov.ndim == 1:
            cov = cov.reshape(n, -1)
        object.__setattr__(self, "covariates", _frozen(cov, float))
        loc = None if location is None else _frozen(np.asarray(location, float).reshape(n, 2), float)
        object.__setattr__(self, "location", loc)
        out = np.zeros(n, np.int8) if outcome is None else outcome
        object.__setattr__(self, "outcome", _frozen(out, np.int8))
        part = np.ones(n, bool) if participant is None else participant
        object.__setattr__(self, "participant", _frozen(part, bool))
        total = n if total_households is None else int(total_households)
        object.__setattr__(self, "total_households", total)
        object.__setattr__(self, "xi_bar", None if xi_bar is None else float(xi_bar))
        object.__setattr__(self, "belief_hat", None if belief_hat is None else float(belief_hat))
        self._validate()

    def __setattr__(self, name, value):
        raise AttributeError("Village is immutable")

    def _validate(self):
        n = len(self.price)
        for name in ("household_ids", "wealth", "outcome", "participant"):
            if len(getattr(self, name)) != n:
                raise InputError(f"village {self.id}: column {name} has wrong length")
        if self.covariates.shape[0] != n:
            raise InputError(f"village {self.id}: covariate rows mismatch")
        if np.any(~(self.price >= 0)) or np.any(~(self.wealth >= 0)):
            raise InputError(f"village {self.id}: prices and wealth must be nonnegative")
        if not np.all((self.outcome == 0) | (self.outcome == 1)):
            raise InputError(f"village {self.id}: outcomes must be binary")
        if self.total_households < self.n_participants:
            raise InputError(
                f"village {self.id}: total_households {self.total_households} "
                f"below participant count {self.n_participants}")
        if self.belief_hat is not None and not 0.0 <= self.belief_hat <= 1.0:
            raise InputError(f"village {self.id}: belief_hat outside [0, 1]")

    # -- construction helpers -------------------------------------------
    @classmethod
    def from_households(cls, id, households: Sequence[Household], **kwargs) -> "Village":
        if not households:
            raise InputError(f"village {id} has no households")
        k = {len(h.covariates) for h in households}
        if len(k) != 1:
            raise InputError(f"village {id}: covariate vectors differ in length")
        has_loc = [h.location is not None for h in households]
        if any(has_loc) and not all(has_loc):
            raise InputError(f"village {id}: locations given for some households only")
        return cls(
            id,
            [h.id for h in households],
            [h.price for h in households],
            [h.wealth for h in households],
            np.array([h.covariates for h in households], float).reshape(len(households), k.pop()),
            np.array([h.location for h in households], float) if all(has_loc) else None,
            [h.outcome for h in households],
            [h.participant for h in households],
            **kwargs,
        )

    def replace(self, **changes) -> "Village":
        fields_ = dict(
            id=self.id, household_ids=self.household_ids, price=self.price,
            wealth=self.wealth, covariates=self.covariates, location=self.location,
            outcome=self.outcome, participant=self.participant,
            total_households=self.total_households, xi_bar=self.xi_bar,
            belief_hat=self.belief_hat)
        fields_.update(changes)
        return Village(**fields_)

    def participants(self) -> "Village":
        """Same village restricted to participant rows."""
        if self.participant.all():
            return self
        m = self.participant
        if not m.any():
            raise InputError(f"village {self.id} has no participants")
        return self.replace(
            household_ids=self.household_ids[m], price=self.price[m],
            wealth=self.wealth[m], covariates=self.covariates[m],
            location=None if self.location is None else self.location[m],
            outcome=self.outcome[m], participant=self.participant[m])

    # -- views -------------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return len(self.price)

    @property
    def n_participants(self) -> int:
        return int(self.participant.sum())

    @property
    def households(self) -> list[Household]:
        loc = self.location
        return [
            Household(int(self.household_ids[i]), self.id, float(self.price[i]),
                      float(self.wealth[i]), tuple(float(v) for v in self.covariates[i]),
                      None if loc is None else (float(loc[i, 0]), float(loc[i, 1])),
                      int(self.outcome[i]), bool(self.participant[i]))
            for i in range(self.n_rows)
        ]

    def __len__(self):
        return self.n_rows

    def __eq__(self, other):
        if not isinstance(other, Village):
            return NotImplemented
        if (self.location is None) != (other.location is None):
            return False
        same = (
            self.id == other.id
            and self.total_households == other.total_households
            and self.xi_bar == other.xi_bar
            and self.belief_hat == other.belief_hat
        )
        return same and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("household_ids", "price", "wealth", "covariates",
                      "outcome", "participant")
        ) and (self.location is None or np.array_equal(self.location, other.location))

    __hash__ = None

    def __repr__(self):
        return (f"Village(id={self.id}, rows={self.n_rows}, "
                f"participants={self.n_participants}, total={self.total_households})")


@dataclass(frozen=True, eq=False)
class Dataset:
    villages: tuple
    covariate_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "villages", tuple(self.villages))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        ids = [v.id for v in self.villages]
        if len(set(ids)) != len(ids):
            raise InputError("village ids must be unique")
        if not self.villages:
            raise InputError("dataset has no villages")
        k = len(self.covariate_names)
        for v in self.villages:
            if v.covariates.shape[1] != k:
                raise InputError(
                    f"village {v.id}: {v.covariates.shape[1]} covariates, expected {k}")
        hh = np.concatenate([v.household_ids for v in self.villages])
        if len(np.unique(hh)) != len(hh):
            raise InputError("household ids must be unique across the dataset")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.covariate_names == other.covariate_names
                and len(self.villages) == len(other.villages)
                and all(a == b for a, b in zip(self.villages, other.villages)))

    __hash__ = None

    @property
    def village_ids(self) -> list[int]:
        return [v.id for v in self.villages]

    def village(self, village_id: int) -> Village:
        for v in self.villages:
            if v.id == village_id:
                return v
        raise InputError(f"unknown village id {village_id}")

    @property
    def n_households(self) -> int:
        return sum(v.n_rows for v in self.villages)

    def participants(self) -> "Dataset":
        return Dataset(tuple(v.participants() for v in self.villages), self.covariate_names)

    def with_villages(self, villages) -> "Dataset":
        return Dataset(tuple(villages), self.covariate_names)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CommonIntercept:
    c0: float

    def get(self, village_id) -> float:
        return float(self.c0)


@dataclass(frozen=True)
class VillageIntercepts:
    """Village-specific intercepts xi_bar, stored as sorted (id, value) pairs."""

    values: tuple

    def __init__(self, values: Union[Mapping[int, float], Iterable]):
        items = values.items() if isinstance(values, Mapping) else values
        object.__setattr__(self, "values", tuple(sorted((int(k), float(v)) for k, v in items)))

    def get(self, village_id) -> float:
        for k, v in self.values:
            if k == village_id:
                return v
        raise InputError(f"no intercept for village {village_id}")

    def as_dict(self) -> dict:
        return dict(self.values)


@dataclass(frozen=True)
class IndexParams:
    c1: float
    c2: float
    c3: tuple
    alpha: float
    intercepts: Union[CommonIntercept, VillageIntercepts]
    error: ErrorDist = LOGIT

    def __post_init__(self):
        object.__setattr__(self, "c3", tuple(float(v) for v in np.atleast_1d(self.c3)))
        object.__setattr__(self, "c1", float(self.c1))
        object.__setattr__(self, "c2", float(self.c2))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "error", ErrorDist.parse(self.error))
        if isinstance(self.intercepts, (int, float)):
            object.__setattr__(self, "intercepts", CommonIntercept(float(self.intercepts)))
        elif isinstance(self.intercepts, Mapping):
            object.__setattr__(self, "intercepts", VillageIntercepts(self.intercepts))

    def intercept_for(self, village_id) -> float:
        return self.intercepts.get(village_id)

    def replace(self, **changes) -> "IndexParams":
        from dataclasses import replace
        return replace(self, **changes)

    @property
    def c3_array(self) -> np.ndarray:
        return np.asarray(self.c3, dtype=float)


@dataclass(frozen=True)
class SpilloverSplit:
    alpha1: float
    alpha0: float

    @property
    def alpha(self) -> float:
        return self.alpha1 - self.alpha0


@dataclass(frozen=True)
class PolicyScenario:
    """Baseline price p0, subsidized price p1 and wealth cutoff tau (eligible iff wealth <= tau).

    tau may be +inf (universal subsidy) or -inf (nobody eligible).
    """

    p0: float
    p1: float
    tau: float

    def __post_init__(self):
        if not self.p1 < self.p0:
            raise InputError(f"subsidized price {self.p1} must be below baseline {self.p0}")
        if math.isnan(self.tau):
            raise InputError("tau is NaN")

    def eligible(self, wealth):
        return np.asarray(wealth, float) <= self.tau

    def prices(self, wealth):
        """Price faced by each household under the policy."""
        return np.where(self.eligible(wealth), self.p1, self.p0)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _check_z(params: IndexParams, z):
    z = np.asarray(z, dtype=float)
    k = len(params.c3)
    if k == 0:
        if z.size and z.shape[-1] != 0:
            raise InputError(f"covariates have length {z.shape[-1]}, model has none")
        return np.zeros(np.shape(z)[:-1] if z.ndim > 1 else ())
    if z.shape[-1:] != (k,):
        raise InputError(f"covariates have shape {z.shape}, expected trailing length {k}")
    return z @ params.c3_array


def linear_index(params: IndexParams, p, y, z, intercept):
    """Index without the belief term: intercept + c1 p + c2 y + c3.z."""
    return intercept + params.c1 * np.asarray(p, float) + params.c2 * np.asarray(y, float) + _check_z(params, z)


def demand_probability(params: IndexParams, p, y, z, pi, village_intercept):
    """Probability of buying at price p, wealth y, covariates z and belief pi."""
    pi = np.asarray(pi, dtype=float)
    if np.any((pi < 0) | (pi > 1)):
        raise InputError("belief must lie in [0, 1]")
    out = params.error.cdf(linear_index(params, p, y, z, village_intercept) + params.alpha * pi)
    return float(out) if np.ndim(out) == 0 else out


def structural_betas(params: IndexParams, check: bool = True) -> tuple[float, float]:
    beta1 = -params.c1
    beta0 = -params.c1 - params.c2
    if check and not (beta1 > 0 and beta0 > 0):
        raise WelfarePreconditionError(
            f"welfare needs beta1 > 0 and beta0 > 0, got beta1={beta1:g}, beta0={beta0:g}")
    return beta1, beta0


def coefficients_from_betas(beta1: float, beta0: float) -> tuple[float, float]:
    return -beta1, beta1 - beta0


def spillover_split(alpha: float, alpha1: float) -> SpilloverSplit:
    if not (0.0 <= alpha1 <= alpha):
        raise InputError(f"alpha1={alpha1} outside [0, alpha={alpha}]")
    return SpilloverSplit(float(alpha1), float(alpha1 - alpha))


def participation_scale(village: Village) -> float:
    """(N_v - 1) / (total_v - 1), with N_v the participant count."""
    n = village.n_participants
    total = village.total_households
    if total <= 1:
        raise InputError(f"village {village.id}: need more than one household to scale beliefs")
    if total < n:
        raise InputError(f"village {village.id}: total households below participant count")
    return (n - 1) / (total - 1)
