"""Experiment configuration and the pipeline stages.

Stages run in order: simulate, fit-shift, fit-contour, generate,
fit-weights, forecast, evaluate. Each stage reads only files written by the
earlier ones and writes under ``out/<stage>/<year>/<MM>/<lead>/``. Every job
draws its randomness from a seed derived from the config seed and the job's
coordinates, so results do not depend on scheduling.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (load_region_config, lengths_from_field, proportion_from_field,
                       proportions_from_lengths, rasterize, contour_from_lengths)
from .grid import BinaryField, ProbabilityField, area_weights, ensemble_probability
from .io import dump_json, load_json, read_field, read_mask, write_csv, write_field
from .layout import init_month, stage_dir
from .mixture import (MixtureForecaster, climatology, mcf_binary, read_weight_table,
                      write_weight_table)
from .model import (ContourModel, PosteriorMeans, contour_probability, export_traces,
                    find_fixed_lines, generate_contours)
from .reference import (climatology_binary, ensemble_binary, fit_persistence,
                        predict_persistence, write_persistence_fit)
from .seeding import derive_seed
from .shift import contour_shift, write_length_table
from .synthetic import SyntheticScenario, simulate
from .verification import brier, plot_brier_by_lead, plot_reliability, sweep, window_sweep

log = logging.getLogger(__name__)

STAGES = ("simulate", "fit-shift", "fit-contour", "generate", "fit-weights", "forecast", "evaluate")

# method name -> (stage, file stem)
METHODS = {
    "mcf": ("forecast", "mcf_prob"),
    "mcf_binary": ("forecast", "mcf_binary"),
    "contour": ("generate", "contour_prob"),
    "climatology": ("forecast", "climatology_binary"),
    "climatology_prob": ("generate", "climatology_prob"),
    "ensemble": ("forecast", "ensemble_binary"),
    "ensemble_prob": ("forecast", "ensemble_prob"),
    "persistence": ("forecast", "persistence_binary"),
    "shift": ("fit-shift", "shifted_binary"),
}
DEFAULT_METHODS = ("mcf", "climatology", "ensemble", "persistence")


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MissingInputError(FileNotFoundError):
    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing inputs: " + ", ".join(self.paths))


@dataclass(frozen=True)
class ExperimentConfig:
    config_path: str
    regions: str
    out: str
    data: str
    months: tuple = (9,)
    leads: tuple = (0.5,)
    test_years: tuple = ()
    first_year: int = 2000
    climatology_years: int = 10
    weight_window: int = 3
    window_sweep: Optional[tuple] = None
    members: int = 25
    n_contours: int = 100
    iterations: int = 55_000
    burn_in: int = 5_000
    persistence_start: Optional[int] = None
    methods: tuple = DEFAULT_METHODS
    reliability_bins: int = 10
    reliability_weighting: str = "equal"
    export_traces: bool = False
    plots: bool = False
    seed: int = 0
    jobs: int = 1
    scenario: Optional[dict] = None

    KEYS = ("regions", "out", "data", "months", "leads", "test_years", "first_year",
            "climatology_years", "weight_window", "window_sweep", "members", "n_contours",
            "mcmc", "persistence_start", "methods", "reliability_bins",
            "reliability_weighting", "export_traces", "plots", "seed", "scenario")

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        """Read a JSON config; paths are relative to the config file.

        Every problem found is reported together in one :class:`ConfigError`.
        """
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        try:
            doc = load_json(path)
        except ValueError as exc:
            raise ConfigError([f"{path}: invalid JSON: {exc}"]) from exc
        errs = [f"unknown config key {k!r}" for k in sorted(set(doc) - set(cls.KEYS))]
        base = path.parent
        out = overrides.pop("out", None)
        out = Path(out) if out is not None else base / doc.get("out", "out")
        data = doc.get("data")
        data = out / "simulate" if data is None else base / data
        if "regions" not in doc:
            errs.append("missing required key 'regions'")
        mcmc = doc.get("mcmc", {})
        kw = dict(
            config_path=str(path.resolve()),
            regions=str(base / doc.get("regions", "")),
            out=str(out), data=str(data),
            months=tuple(int(m) for m in doc.get("months", (9,))),
            leads=tuple(float(l) for l in doc.get("leads", (0.5,))),
            test_years=tuple(int(y) for y in doc.get("test_years", ())),
            first_year=int(doc.get("first_year", 2000)),
            climatology_years=int(doc.get("climatology_years", 10)),
            weight_window=int(doc.get("weight_window", 3)),
            window_sweep=None if doc.get("window_sweep") is None else tuple(doc["window_sweep"]),
            members=int(doc.get("members", 25)),
            n_contours=int(doc.get("n_contours", 100)),
            iterations=int(mcmc.get("iterations", 55_000)),
            burn_in=int(mcmc.get("burn_in", 5_000)),
            persistence_start=doc.get("persistence_start"),
            methods=tuple(doc.get("methods", DEFAULT_METHODS)),
            reliability_bins=int(doc.get("reliability_bins", 10)),
            reliability_weighting=doc.get("reliability_weighting", "equal"),
            export_traces=bool(doc.get("export_traces", False)),
            plots=bool(doc.get("plots", False)),
            seed=int(doc.get("seed", 0)),
            scenario=doc.get("scenario"),
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**kw)
        errs += cfg.violations()
        if errs:
            raise ConfigError(errs)
        return cfg

    def violations(self) -> list:
        errs = []
        if not Path(self.regions).is_file():
            errs.append(f"region config not found: {self.regions}")
        bad = [m for m in self.months if not 1 <= m <= 12]
        if bad:
            errs.append(f"months outside 1..12: {bad}")
        bad = [l for l in self.leads if l < 0.5 or abs(l * 2 - round(l * 2)) > 1e-9 or round(l * 2) % 2 != 1]
        if bad:
            errs.append(f"leads must be 0.5, 1.5, 2.5, ...: {bad}")
        if not self.test_years:
            errs.append("test_years is empty")
        if self.climatology_years < 2:
            errs.append("climatology_years must be at least 2")
        if self.weight_window < 1:
            errs.append("weight_window must be at least 1")
        if self.window_sweep is not None:
            a, b = self.window_sweep
            if not 1 <= a <= b:
                errs.append(f"window sweep {a}..{b} must satisfy 1 <= A <= B")
        if self.members < 1:
            errs.append("members must be at least 1")
        if self.n_contours < 1:
            errs.append("n_contours must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            errs.append("mcmc burn_in must be in [0, iterations)")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            errs.append(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if self.reliability_weighting not in ("area", "equal"):
            errs.append("reliability_weighting must be 'area' or 'equal'")
        if self.test_years:
            first = min(self.contour_years)
            if first - self.climatology_years < self.first_year:
                errs.append(f"contour year {first} needs {self.climatology_years} history years "
                            f"from {self.first_year}; move test_years later or shrink windows")
            if first - self.first_year < 3:
                errs.append(f"contour shifting for {first} needs at least 3 training years after {self.first_year}")
            if self.persistence_start is not None and min(self.test_years) - self.persistence_start < 4:
                errs.append("persistence needs at least 3 training years before the first test year")
        if self.scenario is not None:
            try:
                scn = SyntheticScenario.from_dict(self.scenario)
            except (ValueError, TypeError) as exc:
                errs.append(f"scenario: {exc}")
            else:
                if self.test_years and max(self.test_years) > scn.years[-1]:
                    errs.append(f"test year {max(self.test_years)} beyond simulated years")
                if self.members != scn.members:
                    errs.append(f"members {self.members} differs from scenario members {scn.members}")
                missing = sorted(set(self.months) - set(scn.ens_months))
                if missing:
                    errs.append(f"scenario has no ensemble for months {missing}")
                missing = sorted(set(self.leads) - set(float(l) for l in scn.leads))
                if missing:
                    errs.append(f"scenario has no ensemble for leads {missing}")
        return errs

    @property
    def max_window(self) -> int:
        hi = self.window_sweep[1] if self.window_sweep else 0
        return max(self.weight_window, hi)

    @property
    def contour_years(self) -> list:
        years = set()
        for t in self.test_years:
            years.update(range(t - self.max_window, t + 1))
        return sorted(years)

    @property
    def persistence_first(self) -> int:
        return self.first_year + 1 if self.persistence_start is None else self.persistence_start

    def to_dict(self):
        d = asdict(self)
        d.pop("jobs")
        return d


# ---------------------------------------------------------------- data access

class Data:
    """Read-only access to the observation and ensemble files."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.data)
        self._mask = None
        self._regions = None

    @property
    def mask(self):
        if self._mask is None:
            self._mask = read_mask(self._need(self.root / "mask.json"))
        return self._mask

    @property
    def regions(self):
        if self._regions is None:
            self._regions = [(rc, rc.build(self.mask)) for rc in load_region_config(self.cfg.regions)]
        return self._regions

    def _need(self, path):
        if not Path(path).exists():
            raise MissingInputError([path])
        return path

    def obs(self, year, month) -> BinaryField:
        return read_field(self._need(stage_dir(self.root, "", year, month) / "obs_binary.json"))

    def conc(self, year, month):
        return read_field(self._need(stage_dir(self.root, "", year, month) / "obs_conc.json"))

    def members(self, year, month, lead) -> list:
        d = stage_dir(self.root, "", year, month, lead)
        paths = [d / f"member_{k:02d}.json" for k in range(self.cfg.members)]
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise MissingInputError(missing)
        return [read_field(p) for p in paths]


def _read_stage(cfg, stage, stem, year, month, lead):
    p = stage_dir(cfg.out, stage, year, month, lead) / f"{stem}.json"
    if not p.exists():
        raise MissingInputError([p])
    return read_field(p)


# ---------------------------------------------------------------- stage jobs

def job_fit_shift(cfg: ExperimentConfig, month, lead, year):
    data = Data(cfg)
    mask = data.mask
    out = stage_dir(cfg.out, "fit-shift", year, month, lead)
    shifted = np.where(mask.ocean, 0.0, np.nan)
    summary = {}
    years = list(range(cfg.first_year, year))
    hist = list(range(year - cfg.climatology_years, year))
    for rc, geom in data.regions:
        obs_len = np.array([lengths_from_field(geom, data.obs(y, month)) for y in years])
        ens_len = np.array([np.mean([lengths_from_field(geom, m) for m in data.members(y, month, lead)], axis=0)
                            for y in years])
        now = np.mean([lengths_from_field(geom, m) for m in data.members(year, month, lead)], axis=0)
        props = np.array([proportion_from_field(geom, data.obs(y, month)) for y in hist])
        fixed = find_fixed_lines(props, geom.kind, rc.fixable_lines)
        res = contour_shift(years, obs_len, ens_len, now, year, geom.line_length, fixed=sorted(fixed))
        write_length_table(out / f"region_{rc.region}_lengths.csv", rc.region, years, obs_len, ens_len)
        raster = rasterize(contour_from_lengths(geom, res.lengths), mask.grid, mask, rc.region)
        shifted = np.where(mask.region_cells(rc.region), raster.values, shifted)
        summary[str(rc.region)] = {
            "lengths": res.lengths.tolist(),
            "proportions": proportions_from_lengths(geom, res.lengths).tolist(),
            "ensemble_lengths": now.tolist(),
            "alpha_obs": res.alpha_obs.tolist(), "beta_obs": res.beta_obs.tolist(),
            "alpha_ens": res.alpha_ens.tolist(), "beta_ens": res.beta_ens.tolist(),
            "fixed": {str(k): v for k, v in sorted(fixed.items())},
            "training_years": [years[0], years[-1]],
        }
    write_field(out / "shifted_binary.json", BinaryField(mask.grid, shifted, year, month, lead))
    dump_json(out / "shift.json", summary)


def job_fit_contour(cfg: ExperimentConfig, month, lead, year):
    data = Data(cfg)
    src = stage_dir(cfg.out, "fit-shift", year, month, lead) / "shift.json"
    if not src.exists():
        raise MissingInputError([src])
    shift = load_json(src)
    out = stage_dir(cfg.out, "fit-contour", year, month, lead)
    hist = list(range(year - cfg.climatology_years, year))
    fits = {}
    for rc, geom in data.regions:
        props = np.array([proportion_from_field(geom, data.obs(y, month)) for y in hist])
        seed = derive_seed(cfg.seed, "fit-contour", rc.region, year, month, float(lead))
        model = ContourModel(geometry=geom, iterations=cfg.iterations, burn_in=cfg.burn_in,
                             delta1=rc.delta1, delta2=rc.delta2, fixable_lines=rc.fixable_lines,
                             n_contours=cfg.n_contours, snap_dist=rc.snap_dist, random_state=seed)
        model.fit(props, shift[str(rc.region)]["proportions"])
        fits[str(rc.region)] = model.posterior_.summary()
        if cfg.export_traces and model.posterior_.constant is None and len(model.posterior_.free):
            export_traces(model.posterior_, out / f"traces_region_{rc.region}")
    dump_json(out / "posterior.json", fits)


def job_generate(cfg: ExperimentConfig, month, lead, year):
    data = Data(cfg)
    mask = data.mask
    src = stage_dir(cfg.out, "fit-contour", year, month, lead) / "posterior.json"
    if not src.exists():
        raise MissingInputError([src])
    fits = load_json(src)
    hist = list(range(year - cfg.climatology_years, year))
    clim = climatology([data.obs(y, month) for y in hist])
    gp = clim.values.copy()
    for rc, geom in data.regions:
        means = PosteriorMeans.from_summary(fits[str(rc.region)])
        seed = derive_seed(cfg.seed, "generate", rc.region, year, month, float(lead))
        contours = generate_contours(means, geom, cfg.n_contours, seed, rc.snap_dist)
        p = contour_probability(contours, mask, rc.region)
        cells = mask.region_cells(rc.region)
        gp[cells] = p[cells]
    out = stage_dir(cfg.out, "generate", year, month, lead)
    write_field(out / "contour_prob.json", ProbabilityField(mask.grid, gp, year, month, lead))
    write_field(out / "climatology_prob.json", ProbabilityField(mask.grid, clim.values, year, month, lead))


def _fit_mixture(cfg, data, month, lead, year, window):
    weights = area_weights(data.mask)
    train = list(range(year - window, year))
    obs = [data.obs(y, month) for y in train]
    gp = [_read_stage(cfg, "generate", "contour_prob", y, month, lead) for y in train]
    gc = [_read_stage(cfg, "generate", "climatology_prob", y, month, lead) for y in train]
    return MixtureForecaster().fit(obs, gp, gc, weights, month=month, lead=lead)


def job_fit_weights(cfg: ExperimentConfig, month, lead, year):
    data = Data(cfg)
    est = _fit_mixture(cfg, data, month, lead, year, cfg.weight_window)
    out = stage_dir(cfg.out, "fit-weights", year, month, lead)
    write_weight_table(out / "weight.csv", [(year, est.weight_)])


def job_forecast(cfg: ExperimentConfig, month, lead, year):
    data = Data(cfg)
    mask = data.mask
    out = stage_dir(cfg.out, "forecast", year, month, lead)
    w = read_weight_table(stage_dir(cfg.out, "fit-weights", year, month, lead) / "weight.csv")[0]["w"]
    gp = _read_stage(cfg, "generate", "contour_prob", year, month, lead)
    gc = _read_stage(cfg, "generate", "climatology_prob", year, month, lead)
    p = ProbabilityField(mask.grid, w * gp.values + (1 - w) * gc.values, year, month, lead)
    write_field(out / "mcf_prob.json", p)
    write_field(out / "mcf_binary.json", mcf_binary(p))

    hist = [data.obs(y, month) for y in range(year - cfg.climatology_years, year)]
    write_field(out / "climatology_binary.json", _stamp(climatology_binary(hist), year, month, lead))
    members = data.members(year, month, lead)
    write_field(out / "ensemble_binary.json", _stamp(ensemble_binary(members), year, month, lead))
    write_field(out / "ensemble_prob.json", _stamp(ensemble_probability(members), year, month, lead))

    im, off = init_month(month, lead)
    train = [y for y in range(cfg.persistence_first, year) if y + off >= cfg.first_year]
    fit = fit_persistence([data.conc(y, month) for y in train],
                          [data.conc(y + off, im) for y in train], month, im)
    pred = predict_persistence(fit, data.conc(year + off, im), year)
    write_field(out / "persistence_binary.json", _stamp(pred, year, month, lead))
    write_persistence_fit(out / "persistence_fit", fit)


def _stamp(f, year, month, lead):
    return type(f)(f.grid, f.values, year, month, lead)


def _tuples(cfg, years):
    return [(m, l, y) for y in years for m in cfg.months for l in cfg.leads]


def _method_reader(cfg, name):
    stage, stem = METHODS[name]
    return lambda m, l, y: _read_stage(cfg, stage, stem, y, m, l)


def run_evaluate(cfg: ExperimentConfig):
    data = Data(cfg)
    out = stage_dir(cfg.out, "evaluate")
    weights = area_weights(data.mask)
    methods = {name: _method_reader(cfg, name) for name in cfg.methods}
    tuples = _tuples(cfg, cfg.test_years)
    res = sweep(methods, lambda m, l, y: data.obs(y, m), weights, tuples,
                bins=cfg.reliability_bins, weighting=cfg.reliability_weighting,
                area=data.mask.cell_area)
    res.scores.write_views(out)
    for name, rb in res.reliability.items():
        rb.to_csv(out / f"reliability_{name}.csv")
    write_csv(out / "missing.csv", ["method", "month", "lead", "year", "reason"], res.missing)
    if cfg.window_sweep:
        a, b = cfg.window_sweep

        def score(k):
            vals = []
            for m, l, y in tuples:
                est = _fit_mixture(cfg, data, m, l, y, k)
                gp = _read_stage(cfg, "generate", "contour_prob", y, m, l)
                gc = _read_stage(cfg, "generate", "climatology_prob", y, m, l)
                vals.append(brier(est.predict_proba(gp, gc), data.obs(y, m), weights))
            return vals

        write_csv(out / "window_sweep.csv", ["window", "mean_brier"], window_sweep(score, range(a, b + 1)))
    weights_rows = []
    for m, l, y in tuples:
        p = stage_dir(cfg.out, "fit-weights", y, m, l) / "weight.csv"
        if p.exists():
            weights_rows.extend(read_weight_table(p))
    write_csv(out / "weights.csv", ["month", "lead", "year", "w", "n_triples", "iterations",
                                   "final_loglik", "fallback"],
              [(r["month"], r["lead"], r["year"], r["w"], r["n_triples"], r["iterations"],
                r["final_loglik"], int(r["fallback"])) for r in weights_rows])
    if cfg.plots:
        plot_reliability(res.reliability, out / "reliability.svg")
        plot_brier_by_lead(res.scores, out / "brier_by_lead.svg")
    return res


# ---------------------------------------------------------------- driver

JOBS = {
    "fit-shift": job_fit_shift,
    "fit-contour": job_fit_contour,
    "generate": job_generate,
    "fit-weights": job_fit_weights,
    "forecast": job_forecast,
}


def _call(args):
    fn, cfg, key = args
    return fn(cfg, *key)


def stage_keys(cfg: ExperimentConfig, stage: str) -> list:
    years = cfg.contour_years if stage in ("fit-shift", "fit-contour", "generate") else cfg.test_years
    return _tuples(cfg, years)


def run_stage(cfg: ExperimentConfig, stage: str):
    """Run one stage; returns the evaluation result for ``evaluate``."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    log.info("stage %s", stage)
    result = None
    if stage == "simulate":
        if cfg.scenario is None:
            raise ConfigError(["simulate needs a 'scenario' section in the config"])
        scn = SyntheticScenario.from_dict(cfg.scenario)
        regions = load_region_config(cfg.regions)
        simulate(scn, cfg.data, regions[0] if len(regions) == 1 else None)
    elif stage == "evaluate":
        result = run_evaluate(cfg)
    else:
        fn = JOBS[stage]
        args = [(fn, cfg, key) for key in stage_keys(cfg, stage)]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs) as pool:
                list(pool.map(_call, args))
        else:
            for a in args:
                _call(a)
    record_stage(cfg, stage)
    return result


def run_all(cfg: ExperimentConfig, start="simulate"):
    result = None
    for stage in STAGES[STAGES.index(start):]:
        result = run_stage(cfg, stage)
    return result


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def record_stage(cfg: ExperimentConfig, stage: str):
    """Checksum every file a stage wrote into the top-level run manifest."""
    out = Path(cfg.out)
    root = Path(cfg.data) if stage == "simulate" else out / stage
    files = {str(p.relative_to(out)) if p.is_relative_to(out) else str(p): _digest(p)
             for p in sorted(root.rglob("*")) if p.is_file()}
    path = out / "run_manifest.json"
    doc = load_json(path) if path.exists() else {"stages": {}}
    doc["seed"] = cfg.seed
    doc["stages"][stage] = {"files": files}
    dump_json(path, doc)
