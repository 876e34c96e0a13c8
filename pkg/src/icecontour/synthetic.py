"""Synthetic observations and ensembles drawn from the contour model.

Truth logit proportions follow a seasonal mean curve plus a linear trend and
a month-to-month AR(1) anomaly whose stationary covariance is the model's
``diag(sigma) C(kappa) diag(sigma)``. Ensemble members share a predictable
part of the anomaly whose correlation with the truth decays with lead time;
members scatter around it by ``dispersion`` times the calibrated spread.
"""
from __future__ import annotations

import csv
import io as _io
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.special import expit, logit

from .geometry import (COASTAL, RegionConfig, RegionGeometry, contour_from_lengths,
                       lengths_from_proportions, rasterize)
from .grid import LAND, OCEAN, BinaryField, CellMask, ConcentrationField, GridSpec
from .io import atomic_write_text, dump_json, write_field, write_mask
from .layout import lead_label, stage_dir
from .model import build_covariance, line_distances
from .seeding import rng_for


@dataclass(frozen=True)
class SyntheticScenario:
    nrows: int = 32
    ncols: int = 32
    cell_km: float = 25.0
    island: Optional[tuple] = (10, 12, 20, 22)      # row0, row1, col0, col1 (half-open)
    first_year: int = 2000
    n_years: int = 12
    winter_prop: float = 0.85
    summer_prop: float = 0.45
    shape_amp: float = 0.5
    sigma: float = 0.5
    kappa: float = 3.0
    ar_coef: float = 0.6
    trend: float = -0.04                            # logit units per year
    ens_months: tuple = (9,)
    leads: tuple = (0.5, 1.5)
    members: int = 25
    skill_timescale: Optional[float] = 3.0          # months; None for a perfect predictable part
    dispersion: float = 1.0
    bias_km: float = 0.0
    bias_trend_km: float = 0.0                      # per year
    polynya_rate: float = 0.0
    polynya_radius_km: float = 40.0
    seed: int = 0

    def __post_init__(self):
        errs = []
        if self.nrows < 4 or self.ncols < 4:
            errs.append("grid must be at least 4 x 4")
        if not 0 < self.summer_prop < self.winter_prop < 1:
            errs.append("need 0 < summer_prop < winter_prop < 1")
        if self.sigma <= 0 or self.kappa <= 0:
            errs.append("sigma and kappa must be positive")
        if not -1 < self.ar_coef < 1:
            errs.append("ar_coef must lie in (-1, 1)")
        if self.members < 1:
            errs.append("need at least one member")
        if self.dispersion < 0:
            errs.append("dispersion must be nonnegative")
        if not 0 <= self.polynya_rate <= 1:
            errs.append("polynya_rate must lie in [0, 1]")
        if self.n_years < 1:
            errs.append("need at least one year")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def years(self):
        return list(range(self.first_year, self.first_year + self.n_years))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("island", "ens_months", "leads"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        for key in ("island", "ens_months", "leads"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


def build_mask(scn: SyntheticScenario) -> CellMask:
    """Land along the bottom row plus an optional island; all other ocean is region 1."""
    grid = GridSpec(scn.nrows, scn.ncols, scn.cell_km, scn.cell_km)
    labels = np.full(grid.shape, OCEAN, dtype=np.uint8)
    labels[0, :] = LAND
    if scn.island is not None:
        r0, r1, c0, c1 = scn.island
        labels[r0:r1, c0:c1] = LAND
    regions = np.where(labels == OCEAN, 1, 0)
    return CellMask(grid, labels, regions)


def default_region(scn: SyntheticScenario, n_lines=16) -> RegionConfig:
    """Vertical lines rising from the bottom coast."""
    width = scn.ncols * scn.cell_km
    return RegionConfig(region=1, kind=COASTAL, n_lines=n_lines, angle=np.pi / 2,
                        coast=((0.0, scn.cell_km), (width, scn.cell_km)), name="synthetic")


def mean_curve(scn: SyntheticScenario, n_lines: int) -> np.ndarray:
    """12 x n logit-proportion means; the ice peaks in March and bottoms out in September."""
    mid = 0.5 * (scn.winter_prop + scn.summer_prop)
    half = 0.5 * (scn.winter_prop - scn.summer_prop)
    months = np.arange(1, 13)
    seasonal = logit(mid + half * np.cos(2 * np.pi * (months - 3) / 12))
    shape = scn.shape_amp * np.sin(3 * np.pi * (np.arange(n_lines) + 0.5) / n_lines)
    return seasonal[:, None] + shape[None, :]


def lead_skill(scn: SyntheticScenario, lead: float) -> float:
    if scn.skill_timescale is None:
        return 1.0
    return float(np.exp(-lead / scn.skill_timescale))


def concentration_from_binary(field: BinaryField, mask: CellMask) -> ConcentrationField:
    """Concentration rising with depth into the pack; below 0.15 exactly where there is no ice."""
    ice = np.nan_to_num(field.values) > 0.5
    ocean = mask.ocean
    km = field.grid.min_cell_size
    d_in = distance_transform_edt(ice) * km
    d_out = distance_transform_edt(~ice | ~ocean) * km
    c = np.where(ice, 0.15 + 0.85 * np.minimum(1.0, d_in / 150.0),
                 0.14 * np.maximum(0.0, 1.0 - d_out / 100.0))
    c = np.where(ocean, c, np.nan)
    return ConcentrationField(field.grid, c, field.year, field.month, field.lead)


def add_polynya(field: BinaryField, rng, radius_km: float) -> BinaryField:
    """Open a disc of water centred on a cell lying deep inside the pack."""
    ice = np.nan_to_num(field.values) > 0.5
    km = field.grid.min_cell_size
    depth = distance_transform_edt(ice) * km
    cand = np.argwhere(depth > radius_km + km)
    if not len(cand):
        return field
    r, c = cand[rng.integers(len(cand))]
    X, Y = field.grid.cell_centers()
    hole = np.hypot(X - X[r, c], Y - Y[r, c]) <= radius_km
    v = np.where(hole & ice, 0.0, field.values)
    return field.with_values(v)


def _field_from_props(geom: RegionGeometry, mask: CellMask, props, shift_km=0.0, **stamp):
    lengths = lengths_from_proportions(geom, props) + shift_km
    lengths = np.clip(lengths, 0.0, geom.line_length)
    f = rasterize(contour_from_lengths(geom, lengths), geom.grid, mask, geom.region)
    return BinaryField(f.grid, f.values, **stamp)


def simulate(scn: SyntheticScenario, root, region: Optional[RegionConfig] = None) -> dict:
    """Write observations, ensembles and a ground-truth manifest under ``root``.

    Returns the manifest.
    """
    region = region or default_region(scn)
    mask = build_mask(scn)
    geom = region.build(mask)
    n = geom.n_lines
    root = Path(root)
    write_mask(root / "mask.json", mask)

    mu = mean_curve(scn, n)
    dist = line_distances(geom.kind, geom.angles, np.arange(n))
    L = np.linalg.cholesky(build_covariance(np.full(n, scn.sigma), scn.kappa, dist))
    truth_rng = rng_for(scn.seed, "truth", region.region)
    phi = scn.ar_coef
    anomaly = L @ truth_rng.standard_normal(n)
    truth = {}
    for year in scn.years:
        for month in range(1, 13):
            if (year, month) != (scn.first_year, 1):
                anomaly = phi * anomaly + np.sqrt(1 - phi * phi) * (L @ truth_rng.standard_normal(n))
            truth[year, month] = anomaly.copy()

    rows = []
    for year in scn.years:
        dt = year - scn.first_year
        for month in range(1, 13):
            x = mu[month - 1] + scn.trend * dt + truth[year, month]
            props = expit(x)
            rows.extend((year, month, i, repr(float(p))) for i, p in enumerate(props))
            obs = _field_from_props(geom, mask, props, year=year, month=month)
            prng = rng_for(scn.seed, "polynya", region.region, year, month)
            if scn.polynya_rate > 0 and prng.random() < scn.polynya_rate:
                obs = add_polynya(obs, prng, scn.polynya_radius_km)
            d = stage_dir(root, "", year, month)
            write_field(d / "obs_binary.json", obs)
            write_field(d / "obs_conc.json", concentration_from_binary(obs, mask))

            if month not in scn.ens_months:
                continue
            for lead in scn.leads:
                rho = lead_skill(scn, lead)
                erng = rng_for(scn.seed, "ensemble", region.region, year, month, float(lead))
                signal = rho * truth[year, month] + np.sqrt(1 - rho * rho) * (L @ erng.standard_normal(n))
                spread = scn.dispersion * np.sqrt(1 - rho * rho)
                shift = scn.bias_km + scn.bias_trend_km * dt
                dl = stage_dir(root, "", year, month, lead)
                for k in range(scn.members):
                    xk = mu[month - 1] + scn.trend * dt + rho * signal + spread * (L @ erng.standard_normal(n))
                    member = _field_from_props(geom, mask, expit(xk), shift, year=year, month=month, lead=lead)
                    write_field(dl / f"member_{k:02d}.json", member)

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "month", "line", "proportion"])
    w.writerows(rows)
    atomic_write_text(root / "truth_proportions.csv", buf.getvalue())
    manifest = {
        "scenario": scn.to_dict(),
        "region": region.to_dict(),
        "truth": {
            "mu": mu.tolist(),
            "sigma": scn.sigma,
            "kappa": scn.kappa,
            "trend": scn.trend,
            "ar_coef": scn.ar_coef,
            "lead_skill": {lead_label(l): lead_skill(scn, l) for l in scn.leads},
        },
        "years": scn.years,
        "ens_months": list(scn.ens_months),
        "leads": [float(l) for l in scn.leads],
        "members": scn.members,
    }
    dump_json(root / "manifest.json", manifest)
    return manifest
