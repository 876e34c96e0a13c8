"""Reference forecasts: ensemble median, climatology majority and damped persistence."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted
from .grid import (BinaryField, ConcentrationField, GridSpec, RasterField, check_same_grid,
                   threshold_concentration)
from .io import read_field, write_field


class PersistenceFitError(ValueError):
    pass


def climatology_binary(fields: Sequence[BinaryField]) -> BinaryField:
    """Ice where it was present in at least half (rounded up) of the years."""
    fields = list(fields)
    if not fields:
        raise ValueError("climatology_binary needs at least one year")
    check_same_grid(*fields)
    stack = np.stack([f.values for f in fields])
    need = math.ceil(len(fields) / 2)
    count = np.nansum(stack, axis=0)
    out = np.where(np.isnan(stack[0]), np.nan, (count >= need).astype(float))
    return BinaryField(fields[0].grid, out)


def ensemble_binary(members: Sequence[BinaryField]) -> BinaryField:
    """Median member: ice where at least half the members predict it."""
    members = list(members)
    if not members:
        raise ValueError("ensemble_binary needs at least one member")
    check_same_grid(*members)
    stack = np.stack([m.values for m in members])
    count = np.nansum(stack, axis=0)
    out = np.where(np.isnan(stack[0]), np.nan, (2 * count >= len(members)).astype(float))
    m0 = members[0]
    return BinaryField(m0.grid, out, m0.year, m0.month, m0.lead)


def init_year(t, init_month, target_month):
    """Year of the initialization month for a target in year ``t``."""
    return t if init_month <= target_month else t - 1


def _affine_trend(t, Y):
    """Per-column OLS of ``Y`` (years x cells) on ``t``; returns (intercept, slope, residuals)."""
    tc = t - t.mean()
    slope = tc @ (Y - Y.mean(axis=0)) / (tc @ tc)
    intercept = Y.mean(axis=0) - slope * t.mean()
    return intercept, slope, Y - (intercept + np.outer(t, slope))


def _pearson(x, y):
    """Column-wise correlation; 0 where either column has no variation."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sxx = np.sum(xc * xc, axis=0)
    syy = np.sum(yc * yc, axis=0)
    rho = np.zeros(x.shape[1])
    ok = (sxx > 0) & (syy > 0)
    rho[ok] = np.sum(xc[:, ok] * yc[:, ok], axis=0) / np.sqrt(sxx[ok] * syy[ok])
    return np.clip(rho, -1.0, 1.0)


@dataclass(frozen=True)
class PersistenceFit:
    grid: GridSpec
    target_month: int
    init_month: int
    intercept_m: np.ndarray
    slope_m: np.ndarray
    intercept_i: np.ndarray
    slope_i: np.ndarray
    rho: np.ndarray
    years: tuple


def fit_persistence(target: Sequence[ConcentrationField], init: Sequence[ConcentrationField],
                    target_month: int, init_month: int) -> PersistenceFit:
    """Per-cell affine trends of the target and initialization months, and their correlation.

    ``target[k]`` holds the target month of training year ``t_k`` and
    ``init[k]`` the initialization month paired with it (same year when the
    initialization month is not later than the target month, otherwise the
    year before). Years are read from ``target[k].year``.
    """
    target, init = list(target), list(init)
    if len(target) != len(init):
        raise PersistenceFitError("target and initialization series differ in length")
    if len(target) < 3:
        raise PersistenceFitError(f"need at least 3 training years, got {len(target)}")
    check_same_grid(*target, *init)
    t = np.array([f.year for f in target], dtype=float)
    if len(set(t)) != len(t):
        raise PersistenceFitError("duplicate training years")
    ti = np.array([init_year(y, init_month, target_month) for y in t])
    shape = target[0].grid.shape
    valid = target[0].valid.ravel()
    Ym = np.stack([f.values.ravel() for f in target])[:, valid]
    Yi = np.stack([f.values.ravel() for f in init])[:, valid]
    a_m, b_m, r_m = _affine_trend(t, Ym)
    a_i, b_i, r_i = _affine_trend(ti, Yi)
    # exact zero variation in the raw series leaves only rounding in the residuals
    const = (np.ptp(Ym, axis=0) == 0) | (np.ptp(Yi, axis=0) == 0)
    rho = _pearson(r_m, r_i)
    rho[const] = 0.0

    def full(v):
        out = np.full(valid.size, np.nan)
        out[valid] = v
        return out.reshape(shape)

    return PersistenceFit(target[0].grid, target_month, init_month, full(a_m), full(b_m),
                          full(a_i), full(b_i), full(rho), tuple(int(y) for y in t))


def predict_concentration(fit: PersistenceFit, obs_init: ConcentrationField, t: int) -> ConcentrationField:
    """Trend value for year ``t`` plus the damped initialization anomaly, clamped to [0, 1]."""
    if obs_init.grid != fit.grid:
        raise ValueError("initialization field and fit use different grids")
    ti = init_year(t, fit.init_month, fit.target_month)
    anomaly = obs_init.values - (fit.intercept_i + fit.slope_i * ti)
    c = fit.intercept_m + fit.slope_m * t + fit.rho * anomaly
    return ConcentrationField(fit.grid, np.clip(c, 0.0, 1.0), t, fit.target_month)


def predict_persistence(fit: PersistenceFit, obs_init: ConcentrationField, t: int,
                        tau: float = 0.15) -> BinaryField:
    return threshold_concentration(predict_concentration(fit, obs_init, t), tau)


def write_persistence_fit(directory, fit: PersistenceFit) -> list:
    """Dump trend and correlation rasters as float32 icegrid files."""
    directory = Path(directory)
    written = []
    for name in ("intercept_m", "slope_m", "intercept_i", "slope_i", "rho"):
        path = directory / f"persistence_{name}.json"
        write_field(path, RasterField(fit.grid, getattr(fit, name), month=fit.target_month))
        written.append(path)
    return written


def read_persistence_fit(directory, target_month, init_month, years=()) -> PersistenceFit:
    directory = Path(directory)
    arrs = {name: read_field(directory / f"persistence_{name}.json")
            for name in ("intercept_m", "slope_m", "intercept_i", "slope_i", "rho")}
    grid = arrs["rho"].grid
    return PersistenceFit(grid, target_month, init_month,
                          *(np.asarray(arrs[k].values, dtype=float)
                            for k in ("intercept_m", "slope_m", "intercept_i", "slope_i", "rho")),
                          tuple(years))


class DampedPersistence(BaseEstimator):
    """Estimator form of the damped-persistence forecast."""

    def __init__(self, target_month=9, init_month=8, tau=0.15):
        self.target_month = target_month
        self.init_month = init_month
        self.tau = tau

    def fit(self, target, init):
        self.fit_ = fit_persistence(target, init, self.target_month, self.init_month)
        return self

    def predict(self, obs_init, year) -> BinaryField:
        check_fitted(self, "fit_")
        return predict_persistence(self.fit_, obs_init, year, self.tau)
