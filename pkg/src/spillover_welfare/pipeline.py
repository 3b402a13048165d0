"""Workflow orchestration: data, estimation, equilibria, welfare and result files."""

from __future__ import annotations

import contextlib
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import solve_pi_baseline, solve_pi_policy, uniqueness_scan
from .errors import InputError, SpilloverError
from .estimation import FitResult, FitSpec, fit
from .io import (RunConfig, load_dataset, read_csv, round_sig, write_csv, write_dataset,
                 write_json)
from .model import CommonIntercept, Dataset, IndexParams, PolicyScenario, spillover_split
from .simulation import VillageDesign, standard_population
from .spatial import SpatialConfig, convergence_study, simulate_game
from .welfare import (ELIGIBLE, INELIGIBLE, comparative_statics,
                      cv_cdf_eligible, cv_cdf_ineligible, policy_report)

__all__ = ["ResultBundle", "run_pipeline", "stage", "build_dataset", "fit_variants",
           "net_from_welfare_csv"]

WELFARE_COLUMNS = ("variant", "village_id", "group", "n_households", "alpha1", "mean_gain")
EQUILIBRIUM_COLUMNS = ("variant", "village_id", "pi0", "pi1", "residual0", "residual1",
                       "iterations0", "iterations1", "n_roots0", "n_roots1", "roots0", "roots1")
CDF_COLUMNS = ("variant", "village_id", "group", "household_id", "alpha1", "a", "prob")
CONVERGENCE_COLUMNS = ("N", "lam", "phi", "seeds", "mean_abs_dev", "sup_dev")


@dataclass
class ResultBundle:
    """Paths of the files written by one run, keyed by logical name."""

    output_dir: Path
    files: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.files[name]

    @property
    def params_json(self):
        return self.files.get("params_json")

    @property
    def welfare_csv(self):
        return self.files.get("welfare_csv")

    @property
    def cdf_csv(self):
        return self.files.get("cdf_csv")

    @property
    def equilibrium_csv(self):
        return self.files.get("equilibrium_csv")

    @property
    def convergence_csv(self):
        return self.files.get("convergence_csv")


@contextlib.contextmanager
def stage(name: str):
    """Prefix errors raised inside the block with the pipeline stage name."""
    try:
        yield
    except SpilloverError as e:
        if not getattr(e, "stage", None):
            e.stage = name
            e.args = (f"[{name}] {e.args[0] if e.args else ''}",) + tuple(e.args[1:])
        raise


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _true_params(cfg: RunConfig) -> IndexParams:
    t = cfg.true_params
    return IndexParams(t.c1, t.c2, tuple(t.c3), t.alpha, CommonIntercept(t.c0), t.error)


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path)
    pop = cfg.population
    if pop.xi is not None and len(pop.xi) != pop.n_villages:
        raise InputError("population.xi needs one entry per village")
    design = standard_population(pop.n_villages, pop.n_households, pop.xi)
    if pop.total_households is not None:
        if len(pop.total_households) != pop.n_villages:
            raise InputError("population.total_households needs one entry per village")
        design = type(design)(tuple(
            VillageDesign(d.id, d.n_households, d.xi_bar, d.prices, int(t))
            for d, t in zip(design.villages, pop.total_households)))
    spatial = None
    if cfg.spatial is not None:
        spatial = SpatialConfig(pop.n_households, cfg.spatial.density_c, cfg.spatial.phi, cfg.seed)
    return simulate_game(design, _true_params(cfg), cfg.seed, spatial)


def _fit_spec(cfg: RunConfig, spillover: bool = True) -> FitSpec:
    f = cfg.fit
    return FitSpec(f.estimator, f.error, f.fixed_effects,
                   tied=f.tied if spillover else None,
                   include_belief_regressor=spillover,
                   covariates=f.covariates, scale_beliefs=f.scale_beliefs,
                   alpha_fixed=f.alpha_fixed if spillover else None)


def fit_variants(cfg: RunConfig, data: Dataset) -> dict[str, FitResult]:
    """The spillover model, plus the model without the belief term when requested."""
    out = {"spillover": fit(data, _fit_spec(cfg))}
    if cfg.no_spillover:
        out["no_spillover"] = fit(data, _fit_spec(cfg, spillover=False))
    return out


def _params_for_data(res: FitResult, cfg: RunConfig, data: Dataset) -> IndexParams:
    """Counterfactual params restricted to the covariates the data carries, in order."""
    p = res.params
    if cfg.fit.covariates is None:
        return p
    # zero coefficients for covariates left out of the fit
    c3 = dict(zip(cfg.fit.covariates, p.c3))
    return p.replace(c3=tuple(c3.get(n, 0.0) for n in data.covariate_names))


def _fit_payload(res: FitResult) -> dict:
    return {
        "estimator": res.estimator,
        "error": res.params.error.kind,
        "estimates": res.as_dict(),
        "std_errors": {n: float(s) for n, s in zip(res.param_names, res.std_errors)},
        "loglik": res.loglik,
        "gradient_norm": res.gradient_norm,
        "converged": res.converged,
        "separated": res.separated,
        "boundary": res.boundary,
        "n_obs": res.n_obs,
        "village_intercepts": {str(k): v for k, v in sorted(res.village_intercepts.items())},
        "beliefs": {str(k): v for k, v in sorted(res.beliefs.items())},
    }


def _equilibria(villages, params, scenario):
    """Solver roots per village, plus every root pair when a village has several equilibria."""
    rows, pi0s, pi1s, extra = [], [], [], {}
    for v in villages:
        r0 = solve_pi_baseline(v, params, scenario.p0)
        r1 = solve_pi_policy(v, params, scenario)
        u0 = uniqueness_scan(v, params, scenario.p0)
        u1 = uniqueness_scan(v, params, scenario)
        pi0s.append(r0.value)
        pi1s.append(r1.value)
        if len(u0.roots) > 1 or len(u1.roots) > 1:
            extra[v.id] = [(a, b) for a in u0.roots or (r0.value,) for b in u1.roots or (r1.value,)]
        rows.append(dict(village_id=v.id, pi0=r0.value, pi1=r1.value,
                         residual0=r0.residual, residual1=r1.residual,
                         iterations0=r0.iterations, iterations1=r1.iterations,
                         n_roots0=len(u0.roots), n_roots1=len(u1.roots),
                         roots0=";".join(f"{r:.12g}" for r in u0.roots),
                         roots1=";".join(f"{r:.12g}" for r in u1.roots)))
    return rows, pi0s, pi1s, extra


def _welfare_rows(report, variant):
    rows = []
    for vw in report.villages:
        for group, n, b in ((ELIGIBLE, vw.n_eligible, vw.eligible),
                            (INELIGIBLE, vw.n_households - vw.n_eligible, vw.ineligible)):
            if b is None:
                continue
            for a1, g in b.curve:
                rows.append(dict(variant=variant, village_id=vw.village_id, group=group,
                                 n_households=n, alpha1=a1, mean_gain=g))
    return rows


def _cdf_rows(villages, params, scenario, report, variant):
    """CV distribution grids for the median-wealth household of each group and village."""
    rows = []
    alphas = sorted({0.0, params.alpha / 2.0, params.alpha}) if params.alpha > 0 else [0.0]
    for v, vw in zip(villages, report.villages):
        elig = scenario.eligible(v.wealth)
        for group, mask, make in ((ELIGIBLE, elig, cv_cdf_eligible),
                                  (INELIGIBLE, ~elig, cv_cdf_ineligible)):
            idx = np.flatnonzero(mask)
            if idx.size == 0:
                continue
            i = idx[np.argsort(v.wealth[idx], kind="stable")[(idx.size - 1) // 2]]
            for a1 in alphas:
                cdf = make(params, spillover_split(params.alpha, a1), v.wealth[i], v.covariates[i],
                           scenario, vw.pi0, vw.pi1, params.intercept_for(v.id))
                for a, p in cdf.grid:
                    rows.append(dict(variant=variant, village_id=v.id, group=group,
                                     household_id=int(v.household_ids[i]), alpha1=a1, a=a, prob=p))
    return rows


def _policy(cfg, data, fits, out_dir, files, summary):
    sc = cfg.scenario
    scenario = PolicyScenario(sc.p0, sc.p1, sc.tau)
    villages = [v.participants() for v in data.villages]
    eq_rows, w_rows, cdf_rows = [], [], []
    summary["policy"] = {"scenario": {"p0": sc.p0, "p1": sc.p1, "tau": sc.tau}}
    for variant, res in fits.items():
        params = _params_for_data(res, cfg, data)
        with stage(f"equilibrium:{variant}"):
            rows, pi0s, pi1s, extra = _equilibria(villages, params, scenario)
        eq_rows += [dict(variant=variant, **r) for r in rows]
        with stage(f"welfare:{variant}"):
            rep = policy_report(villages, params, scenario, cfg.alpha1_grid or None, pi0s, pi1s)
            cdf_rows += _cdf_rows(villages, params, scenario, rep, variant)
            w_rows += _welfare_rows(rep, variant)
            # with several equilibria, welfare is reported separately for each root pair
            for vid, pairs in extra.items():
                v = next(x for x in villages if x.id == vid)
                for a, b in pairs:
                    label = f"{variant}[village={vid},pi0={a:.6g},pi1={b:.6g}]"
                    r = policy_report([v], params, scenario, cfg.alpha1_grid or None, [a], [b])
                    w_rows += _welfare_rows(r, label)
        summary["policy"][variant] = {
            "eligible_share": rep.eligible_share,
            "net_gain": {"lower": rep.net_lower, "symmetric": rep.net_symmetric,
                         "upper": rep.net_upper},
            "net_curve": [[a, g] for a, g in rep.net_curve],
            "spending": rep.spending,
            "dwl": {"lower": rep.dwl_lower, "upper": rep.dwl_upper},
        }
    files["equilibrium_csv"] = write_csv(out_dir / "equilibrium.csv", EQUILIBRIUM_COLUMNS, eq_rows)
    files["welfare_csv"] = write_csv(out_dir / "welfare.csv", WELFARE_COLUMNS, w_rows)
    files["cdf_csv"] = write_csv(out_dir / "cdf.csv", CDF_COLUMNS, cdf_rows)


def _comparative_statics(cfg, data, fits, out_dir, files, summary):
    sc = cfg.scenario
    template = PolicyScenario(sc.p0, sc.p1, sc.tau)
    params = _params_for_data(fits["spillover"], cfg, data)
    ns = _params_for_data(fits["no_spillover"], cfg, data) if "no_spillover" in fits else None
    with stage("comparative-statics"):
        rows = comparative_statics(data, params, template, cfg.shares, cfg.alpha1_grid or None, ns)
    header = list(rows[0].keys())
    files["comparative_statics_csv"] = write_csv(out_dir / "comparative_statics.csv", header, rows)


def _convergence(cfg, out_dir, files):
    c = cfg.convergence
    params = IndexParams(c.c1, c.c2, (0.0, 0.0), c.alpha, CommonIntercept(c.c0), "probit")
    with stage("convergence"):
        rows = convergence_study(c.n_list, c.seeds, c.phi, params, c.density_c,
                                 master_seed=cfg.seed)
    files["convergence_csv"] = write_csv(
        out_dir / "convergence.csv", CONVERGENCE_COLUMNS,
        [dict(N=r.N, lam=r.lam, phi=r.phi, seeds=r.seeds, mean_abs_dev=r.mean_abs_dev,
              sup_dev=r.sup_dev) for r in rows])


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _versions() -> dict:
    import numba
    import scipy
    return {"spillover_welfare": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: RunConfig) -> ResultBundle:
    """Run the configured workflow and write its files under ``config.output_dir``."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}
    summary: dict = {"workflow": config.workflow}

    if config.workflow == "convergence":
        _convergence(config, out_dir, files)
    else:
        with stage("data"):
            data = build_dataset(config)
        if config.workflow == "simulate":
            paths = write_dataset(data, out_dir / "dataset.csv")
            files["dataset_csv"], files["villages_csv"] = paths
        else:
            with stage("estimate"):
                fits = fit_variants(config, data)
            summary["fits"] = {k: _fit_payload(r) for k, r in fits.items()}
            if config.workflow == "policy":
                _policy(config, data, fits, out_dir, files, summary)
            elif config.workflow == "comparative-statics":
                _comparative_statics(config, data, fits, out_dir, files, summary)
    if config.workflow != "simulate" and config.workflow != "convergence":
        files["params_json"] = write_json(out_dir / "params.json", summary)

    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    files["config_json"] = config_path
    manifest = {
        "workflow": config.workflow,
        "seed": config.seed,
        "config_hash": config.hash(),
        "versions": _versions(),
        "files": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in sorted(files.items())},
    }
    mpath = out_dir / "manifest.json"
    mpath.write_text(json.dumps(round_sig(manifest), indent=2, sort_keys=True) + "\n")
    files["manifest"] = mpath
    return ResultBundle(out_dir, files, manifest)


def net_from_welfare_csv(path, variant: str = "spillover") -> dict:
    """Recompute the pooled net gain per alpha1 from welfare.csv rows and household counts."""
    num: dict[float, float] = {}
    den: dict[float, float] = {}
    for r in read_csv(path):
        if r["variant"] != variant:
            continue
        a1 = r["alpha1"]
        num[a1] = num.get(a1, 0.0) + r["n_households"] * r["mean_gain"]
        den[a1] = den.get(a1, 0.0) + r["n_households"]
    # every household appears exactly once per alpha1 within a variant
    return {a: num[a] / den[a] for a in sorted(num)}
