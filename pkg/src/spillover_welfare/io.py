"""Household CSV files, run configuration and deterministic result writers.

Household file columns (in this order)::

    household_id,village_id,price,wealth,children,female_edu,loc_x,loc_y,outcome,participant

``loc_x``/``loc_y`` are left blank when households have no location.  The
``wealth`` column is the income/wealth measure that enters the index; the
two words are used interchangeably.

Village-level attributes that do not fit a household row (participation
totals, fixed effects, belief estimates) live in an optional companion
file ``<stem>.villages.csv`` with columns
``village_id,total_households,xi_bar,belief_hat``.  When that file exists,
every household's village must be listed in it.

Datasets are written with shortest round-trip float text so that reloading
reproduces them bit for bit; derived results are written at 12 significant
digits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import InputError
from .model import Dataset, Village
from .simulation import COVARIATE_NAMES

__all__ = [
    "HOUSEHOLD_COLUMNS",
    "VILLAGE_COLUMNS",
    "load_dataset",
    "write_dataset",
    "village_table_path",
    "fmt",
    "write_csv",
    "read_csv",
    "write_json",
    "round_sig",
    "RunConfig",
    "PopulationSection",
    "TrueParams",
    "SpatialSection",
    "ScenarioSection",
    "FitSection",
    "ConvergenceSection",
    "load_config",
]

HOUSEHOLD_COLUMNS = ("household_id", "village_id", "price", "wealth", "children",
                     "female_edu", "loc_x", "loc_y", "outcome", "participant")
VILLAGE_COLUMNS = ("village_id", "total_households", "xi_bar", "belief_hat")
_REQUIRED = ("household_id", "village_id", "price", "wealth", "children", "female_edu",
             "outcome", "participant")
SIG_DIGITS = 12


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------


def village_table_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".villages.csv")


def _offenders(kind, items, limit=20):
    shown = ", ".join(str(i) for i in items[:limit])
    more = f" (+{len(items) - limit} more)" if len(items) > limit else ""
    return f"{kind}: {shown}{more}"


def _read_village_table(path: Path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(h.strip() for h in header) != VILLAGE_COLUMNS:
            raise InputError(f"{path}: header must be {','.join(VILLAGE_COLUMNS)}")
        bad = []
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            try:
                vid = int(row[0])
                total = int(row[1]) if row[1].strip() else None
                xi = float(row[2]) if row[2].strip() else None
                bh = float(row[3]) if row[3].strip() else None
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            if vid in out:
                bad.append(lineno)
                continue
            out[vid] = dict(total_households=total, xi_bar=xi, belief_hat=bh)
        if bad:
            raise InputError(f"{path}: " + _offenders("malformed or duplicate rows", bad))
    return out


def load_dataset(path) -> Dataset:
    """Parse a household CSV (and its village table, if present) into a Dataset.

    Villages appear in order of first occurrence and households keep file
    order.  Every problem of a given kind is reported at once with the
    offending line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(h.strip() for h in header) != HOUSEHOLD_COLUMNS:
            raise InputError(f"{path}: header must be {','.join(HOUSEHOLD_COLUMNS)}")
        rows = [(lineno, row) for lineno, row in enumerate(rd, start=2) if row]
    if not rows:
        raise InputError(f"{path}: dataset is empty")

    missing, malformed, invalid = [], [], []
    parsed = []
    col = {c: i for i, c in enumerate(HOUSEHOLD_COLUMNS)}
    for lineno, row in rows:
        if len(row) != len(HOUSEHOLD_COLUMNS):
            malformed.append(lineno)
            continue
        row = [c.strip() for c in row]
        if any(row[col[c]] == "" for c in _REQUIRED):
            missing.append(lineno)
            continue
        try:
            hid, vid = int(row[0]), int(row[1])
            price, wealth, kids, edu = (float(row[col[c]]) for c in
                                        ("price", "wealth", "children", "female_edu"))
            lx, ly = row[col["loc_x"]], row[col["loc_y"]]
            if (lx == "") != (ly == ""):
                raise ValueError
            loc = None if lx == "" else (float(lx), float(ly))
            outcome, part = int(row[col["outcome"]]), int(row[col["participant"]])
        except ValueError:
            malformed.append(lineno)
            continue
        finite = all(math.isfinite(v) for v in (price, wealth, kids, edu) + (loc or ()))
        if not finite or price < 0 or wealth < 0 or outcome not in (0, 1) or part not in (0, 1):
            invalid.append(lineno)
            continue
        parsed.append((lineno, hid, vid, price, wealth, kids, edu, loc, outcome, part))
    for kind, lines in (("missing required fields on lines", missing),
                        ("malformed numbers on lines", malformed),
                        ("out-of-range values on lines", invalid)):
        if lines:
            raise InputError(f"{path}: " + _offenders(kind, lines))

    seen, dups = {}, []
    for r in parsed:
        if r[1] in seen:
            dups.append(f"{r[1]} (lines {seen[r[1]]} and {r[0]})")
        else:
            seen[r[1]] = r[0]
    if dups:
        raise InputError(f"{path}: " + _offenders("duplicate household ids", dups))

    vt_path = village_table_path(path)
    meta = _read_village_table(vt_path) if vt_path.exists() else None
    if meta is not None:
        unknown = sorted({(r[2], r[0]) for r in parsed if r[2] not in meta})
        if unknown:
            raise InputError(f"{path}: " + _offenders(
                "unknown village ids", [f"{v} (line {ln})" for v, ln in unknown]))

    groups: dict[int, list] = {}
    for r in parsed:
        groups.setdefault(r[2], []).append(r)
    villages = []
    for vid, rs in groups.items():
        locs = [r[7] for r in rs]
        if any(loc is None for loc in locs) and not all(loc is None for loc in locs):
            raise InputError(f"{path}: village {vid} has locations for some households only")
        kw = {} if meta is None else meta[vid]
        villages.append(Village(
            vid,
            [r[1] for r in rs],
            [r[3] for r in rs],
            [r[4] for r in rs],
            np.array([[r[5], r[6]] for r in rs], float),
            None if locs[0] is None else np.array(locs, float),
            np.array([r[8] for r in rs], np.int8),
            np.array([r[9] for r in rs], bool),
            **kw,
        ))
    return Dataset(tuple(villages), COVARIATE_NAMES)


def _exact(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, path) -> list[Path]:
    """Write the household file and its village table; returns both paths."""
    if tuple(dataset.covariate_names) != COVARIATE_NAMES:
        raise InputError(f"the household file stores covariates {COVARIATE_NAMES}, "
                         f"dataset has {dataset.covariate_names}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOUSEHOLD_COLUMNS)
        for v in dataset.villages:
            for i in range(v.n_rows):
                loc = ("", "") if v.location is None else tuple(_exact(c) for c in v.location[i])
                w.writerow([int(v.household_ids[i]), v.id, _exact(v.price[i]), _exact(v.wealth[i]),
                            _exact(v.covariates[i, 0]), _exact(v.covariates[i, 1]), *loc,
                            int(v.outcome[i]), int(v.participant[i])])
    vt = village_table_path(path)
    with open(vt, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VILLAGE_COLUMNS)
        for v in dataset.villages:
            w.writerow([v.id, v.total_households,
                        "" if v.xi_bar is None else _exact(v.xi_bar),
                        "" if v.belief_hat is None else _exact(v.belief_hat)])
    return [path, vt]


# ---------------------------------------------------------------------------
# Result emission
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """Cell text: integers and strings verbatim, floats at 12 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        s = format(x, f".{SIG_DIGITS}g")
        return "0" if s == "-0" else s
    return str(x)


def round_sig(x):
    """Recursively round floats to the emitted precision (JSON payloads)."""
    if isinstance(x, dict):
        return {str(k): round_sig(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [round_sig(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not math.isfinite(x) else float(fmt(x))
    return x


def write_csv(path, header, rows) -> Path:
    """Rows are dicts keyed by header names; absent keys become blank cells."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r.get(h)) for h in header])
    return path


def read_csv(path) -> list[dict]:
    """Read an emitted CSV back; numeric-looking cells become float, blanks None."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if v == "":
                    rec[k] = None
                    continue
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
            out.append(rec)
    return out


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(round_sig(payload), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

WORKFLOWS = ("simulate", "estimate", "policy", "convergence", "comparative-statics")


@dataclass(frozen=True)
class TrueParams:
    """Data-generating index parameters; each village adds its ``xi`` to ``c0``."""

    c0: float = -1.0
    c1: float = -0.01
    c2: float = 2e-5
    c3: tuple = (0.1, 0.05)
    alpha: float = 2.0
    error: str = "logit"


@dataclass(frozen=True)
class PopulationSection:
    n_villages: int = 11
    n_households: int = 500
    xi: tuple | None = None     # per-village effects; default is a fixed pattern
    total_households: tuple | None = None


@dataclass(frozen=True)
class SpatialSection:
    phi: float = 2.0
    density_c: float = 1.0


@dataclass(frozen=True)
class ScenarioSection:
    p0: float = 250.0
    p1: float = 50.0
    tau: float = 8000.0


@dataclass(frozen=True)
class FitSection:
    estimator: str = "BR"
    error: str = "logit"
    fixed_effects: str = "dummies"
    tied: tuple | None = (1, 11)
    covariates: tuple | None = None
    scale_beliefs: bool = True
    alpha_fixed: float | None = None


@dataclass(frozen=True)
class ConvergenceSection:
    n_list: tuple = (100, 400, 1600)
    seeds: int = 20
    phi: float = 2.0
    density_c: float = 1.0
    c0: float = 0.0
    c1: float = -0.005
    c2: float = 1e-5
    alpha: float = 1.5


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs.  ``dataset_path`` None means: simulate from ``population``."""

    workflow: str = "policy"
    seed: int | None = 0
    output_dir: str = "results"
    dataset_path: str | None = None
    population: PopulationSection = field(default_factory=PopulationSection)
    true_params: TrueParams = field(default_factory=TrueParams)
    spatial: SpatialSection | None = None
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    fit: FitSection = field(default_factory=FitSection)
    alpha1_grid: tuple = ()
    no_spillover: bool = False
    shares: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)

    def __post_init__(self):
        if self.workflow not in WORKFLOWS:
            raise InputError(f"workflow must be one of {WORKFLOWS}, got {self.workflow!r}")
        if self.workflow in ("simulate", "convergence") and self.seed is None:
            raise InputError(f"the {self.workflow} workflow needs a seed")
        if self.workflow != "convergence" and self.dataset_path is None and self.seed is None:
            raise InputError("simulating a dataset needs a seed")
        if any(not 0.0 <= s < 1.0 for s in self.shares):
            raise InputError("eligibility shares must lie in [0, 1)")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        return _build(cls, data or {}, "config")

    def override(self, changes: dict) -> "RunConfig":
        merged = self.to_dict()
        for key, value in changes.items():
            _set_path(merged, key, value)
        return RunConfig.from_dict(merged)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        if d.get(k) is None:
            d[k] = {}
        if not isinstance(d[k], dict):
            raise InputError(f"cannot set {dotted}: {k} is not a section")
        d = d[k]
    d[keys[-1]] = value


def _section_type(tp):
    # annotations are strings under postponed evaluation
    names = {c.__name__: c for c in (PopulationSection, TrueParams, SpatialSection,
                                     ScenarioSection, FitSection, ConvergenceSection)}
    for name, c in names.items():
        if name in str(tp):
            return c
    return None


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise InputError(f"{where}: unknown keys {unknown}")
    kw = {}
    for name, value in data.items():
        sub = _section_type(known[name].type)
        if sub is not None and value is not None:
            kw[name] = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        obj = cls(**kw)
    except TypeError as e:
        raise InputError(f"{where}: {e}") from None
    for f in fields(obj):
        if is_dataclass(getattr(obj, f.name)):
            continue
        _check_type(getattr(obj, f.name), str(f.type), f"{where}.{f.name}")
    return obj


def _check_type(value, tp, where):
    if value is None:
        if "None" not in tp:
            raise InputError(f"{where}: value required")
        return
    if tp.startswith("float") and (not isinstance(value, (int, float)) or isinstance(value, bool)):
        raise InputError(f"{where}: expected a number, got {value!r}")
    if tp.startswith("int") and (not isinstance(value, int) or isinstance(value, bool)):
        raise InputError(f"{where}: expected an integer, got {value!r}")
    if tp.startswith("bool") and not isinstance(value, bool):
        raise InputError(f"{where}: expected true/false, got {value!r}")
    if tp.startswith("str") and not isinstance(value, str):
        raise InputError(f"{where}: expected text, got {value!r}")
    if tp.startswith("tuple") and not isinstance(value, tuple):
        raise InputError(f"{where}: expected a list, got {value!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise InputError(f"config {path} is not valid YAML: {e}") from None
    return RunConfig.from_dict(data)
