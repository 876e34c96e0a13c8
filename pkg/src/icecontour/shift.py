"""Contour Shifting: robust per-line trend correction of ensemble-mean edge lengths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_matrix
from .io import read_csv, write_csv

MAD_SCALE = norm.ppf(0.75)


class SingularDesignError(ValueError):
    pass


def huber_fit(x, y, tuning=1.345, tol=1e-8, max_iter=100):
    """Huber M-estimate of ``y = alpha + beta * x`` by iteratively reweighted least squares.

    The residual scale is re-estimated each iteration from the median absolute
    deviation. Returns ``(alpha, beta)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("need at least three (x, y) pairs")
    if tuning <= 0:
        raise ValueError("tuning constant must be positive")
    if np.ptp(x) == 0:
        raise SingularDesignError("all x values are identical")
    xc = x.mean()
    A = np.column_stack([np.ones_like(x), x - xc])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    floor = 1e-12 * (1.0 + np.abs(y).max())
    for _ in range(max_iter):
        r = y - A @ coef
        scale = max(np.median(np.abs(r - np.median(r))) / MAD_SCALE, floor)
        u = np.abs(r) / scale
        w = np.where(u <= tuning, 1.0, tuning / np.maximum(u, tuning))
        sw = np.sqrt(w)
        new = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)[0]
        done = np.max(np.abs(new - coef)) < tol
        coef = new
        if done:
            break
    alpha = coef[0] - coef[1] * xc
    return float(alpha), float(coef[1])


@dataclass(frozen=True)
class ShiftedForecast:
    lengths: np.ndarray             # per line, clamped to [0, line length]
    alpha_obs: np.ndarray
    beta_obs: np.ndarray
    alpha_ens: np.ndarray
    beta_ens: np.ndarray
    year: int


def check_years(years, start=None, end=None):
    """Raise listing any gaps in a run of training years."""
    years = sorted(int(y) for y in years)
    lo = years[0] if start is None else start
    hi = years[-1] if end is None else end
    missing = sorted(set(range(lo, hi + 1)) - set(years))
    if missing:
        raise ValueError(f"training years missing: {missing}")
    return years


def contour_shift(years, obs_lengths, ens_lengths, ens_now, year, line_length,
                  fixed=(), tuning=1.345) -> ShiftedForecast:
    """Shift the current ensemble lengths by the gap between the two fitted trends at ``year``.

    ``obs_lengths`` and ``ens_lengths`` are (years x lines). Lines listed in
    ``fixed`` pass through unchanged.
    """
    years = np.asarray(years, dtype=float)
    check_years(years.astype(int))
    obs = check_matrix(obs_lengths, "obs_lengths")
    ens = check_matrix(ens_lengths, "ens_lengths")
    now = np.asarray(ens_now, dtype=float)
    n = obs.shape[1]
    line_length = np.broadcast_to(np.asarray(line_length, dtype=float), (n,))
    ao, bo, ae, be = (np.zeros(n) for _ in range(4))
    out = now.copy()
    fixed = set(int(i) for i in fixed)
    for i in range(n):
        if i in fixed:
            continue
        ao[i], bo[i] = huber_fit(years, obs[:, i], tuning)
        ae[i], be[i] = huber_fit(years, ens[:, i], tuning)
        out[i] = now[i] + (ao[i] + bo[i] * year) - (ae[i] + be[i] * year)
    out = np.clip(out, 0.0, line_length)
    return ShiftedForecast(out, ao, bo, ae, be, int(year))


def write_length_table(path, region, years, obs_lengths, ens_lengths):
    rows = []
    for j, y in enumerate(years):
        for i in range(np.shape(obs_lengths)[1]):
            rows.append((region, i, int(y), float(obs_lengths[j][i]), float(ens_lengths[j][i])))
    write_csv(path, ["region", "line", "year", "obs_length", "ens_length"], rows)


def read_length_table(path):
    """Return ``(years, obs, ens)`` arrays from a length table."""
    rows = read_csv(path)
    years = sorted({int(r["year"]) for r in rows})
    n = max(int(r["line"]) for r in rows) + 1
    obs = np.zeros((len(years), n))
    ens = np.zeros((len(years), n))
    pos = {y: k for k, y in enumerate(years)}
    for r in rows:
        obs[pos[int(r["year"])], int(r["line"])] = float(r["obs_length"])
        ens[pos[int(r["year"])], int(r["line"])] = float(r["ens_length"])
    return np.array(years), obs, ens


class ContourShifter(BaseEstimator):
    """Fit observed and ensemble length trends, then shift new ensemble lengths."""

    def __init__(self, tuning=1.345, line_length=None, fixed=()):
        self.tuning = tuning
        self.line_length = line_length
        self.fixed = fixed

    def fit(self, years, obs_lengths, ens_lengths):
        obs = check_matrix(obs_lengths, "obs_lengths")
        ens = check_matrix(ens_lengths, "ens_lengths")
        if obs.shape != ens.shape or obs.shape[0] != len(years):
            raise ValueError("length tables must be years x lines and agree in shape")
        check_years(years)
        n = obs.shape[1]
        self.coef_obs_ = np.zeros((n, 2))
        self.coef_ens_ = np.zeros((n, 2))
        fixed = set(self.fixed)
        for i in range(n):
            if i not in fixed:
                self.coef_obs_[i] = huber_fit(years, obs[:, i], self.tuning)
                self.coef_ens_[i] = huber_fit(years, ens[:, i], self.tuning)
        return self

    def predict(self, ens_now, year):
        check_fitted(self, "coef_obs_")
        now = np.asarray(ens_now, dtype=float)
        gap = (self.coef_obs_[:, 0] + self.coef_obs_[:, 1] * year) - \
              (self.coef_ens_[:, 0] + self.coef_ens_[:, 1] * year)
        out = now + gap
        hi = np.inf if self.line_length is None else self.line_length
        return np.clip(out, 0.0, hi)
