"""Two-component mixture of the contour-model field with climatology.

The weight on the contour model is fitted by expectation-maximisation over
past (cell, year) outcomes, separately for each forecast month and lead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_probability
from .grid import BinaryField, ProbabilityField, check_same_grid
from .io import read_csv, write_csv

log = logging.getLogger(__name__)

G_CLAMP = 1e-6


class WeightUndefinedError(ValueError):
    """Every training pair was degenerate, so the likelihood does not depend on w."""


@dataclass(frozen=True)
class MixtureWeight:
    w: float
    loglik: np.ndarray = field(repr=False)
    n_triples: int = 0
    iterations: int = 0
    window: int = 3
    month: int | None = None
    lead: float | None = None
    fallback: bool = False

    @property
    def final_loglik(self) -> float:
        return float(self.loglik[-1]) if len(self.loglik) else float("nan")


def climatology(fields: Sequence[BinaryField]) -> ProbabilityField:
    """Per-cell frequency of ice over the given years."""
    fields = list(fields)
    if not fields:
        raise ValueError("climatology needs at least one year")
    check_same_grid(*fields)
    stack = np.stack([f.values for f in fields])
    return ProbabilityField(fields[0].grid, stack.mean(axis=0))


def component_probability(observed, p):
    """Probability a component gave to the outcome that happened."""
    p = check_probability(p)
    observed = np.asarray(observed)
    return np.where(observed == 1, p, 1.0 - p)


def _mixture_loglik(w, gp, gc, a):
    return float(np.sum(a * np.log(w * gp + (1.0 - w) * gc)))


def training_arrays(obs, gp, gc, weights):
    """Flatten per-year fields into (g_p, g_c, a) for the scored cells.

    ``obs``, ``gp`` and ``gc`` are sequences of fields (or arrays) for the
    same years; ``weights`` is one per-cell area weight array shared by all.
    """
    gps, gcs, areas = [], [], []
    a_all = np.asarray(weights, dtype=float)
    for o, p, c in zip(obs, gp, gc, strict=True):
        o, p, c = (getattr(v, "values", v) for v in (o, p, c))
        ok = ~(np.isnan(o) | np.isnan(p) | np.isnan(c)) & (a_all > 0)
        gps.append(component_probability(o[ok], p[ok]))
        gcs.append(component_probability(o[ok], c[ok]))
        areas.append(a_all[ok])
    if not gps:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return np.concatenate(gps), np.concatenate(gcs), np.concatenate(areas)


def fit_weight(gp, gc, a=None, w0=0.5, tol=1e-8, max_iter=10_000, **labels) -> MixtureWeight:
    """EM estimate of the contour-model weight.

    Parameters
    ----------
    gp, gc : array_like
        Probability each component assigned to the observed outcome, one
        entry per (cell, year) pair.
    a : array_like, optional
        Area weight of each pair; uniform when omitted.
    w0 : float
        Starting weight in (0, 1).

    Returns
    -------
    MixtureWeight
        With the log-likelihood ``sum a log(w gp + (1 - w) gc)`` at the start
        and after every M-step.
    """
    gp = np.clip(np.asarray(gp, dtype=float).ravel(), G_CLAMP, 1 - G_CLAMP)
    gc = np.clip(np.asarray(gc, dtype=float).ravel(), G_CLAMP, 1 - G_CLAMP)
    a = np.ones_like(gp) if a is None else np.asarray(a, dtype=float).ravel()
    if not (gp.shape == gc.shape == a.shape):
        raise ValueError("gp, gc and a must have the same length")
    if not 0 < w0 < 1:
        raise ValueError("w0 must lie in (0, 1)")
    keep = (gp != gc) & (a > 0)
    if not keep.any():
        raise WeightUndefinedError("all training pairs are degenerate (g_p == g_c)")
    gp, gc, a = gp[keep], gc[keep], a[keep]
    total = a.sum()
    w = w0
    trace = [_mixture_loglik(w, gp, gc, a)]
    it = 0
    for it in range(1, max_iter + 1):
        num = w * gp
        z = num / (num + (1.0 - w) * gc)
        new = float(np.sum(a * z) / total)
        trace.append(_mixture_loglik(new, gp, gc, a))
        done = abs(new - w) < tol
        w = new
        if done:
            break
    return MixtureWeight(w, np.array(trace), int(keep.sum()), it, **labels)


def grid_search_weight(gp, gc, a=None, points=1001) -> float:
    """Maximiser of the mixture likelihood over an even grid on [0, 1]."""
    gp = np.clip(np.asarray(gp, dtype=float).ravel(), G_CLAMP, 1 - G_CLAMP)
    gc = np.clip(np.asarray(gc, dtype=float).ravel(), G_CLAMP, 1 - G_CLAMP)
    a = np.ones_like(gp) if a is None else np.asarray(a, dtype=float).ravel()
    keep = gp != gc
    ws = np.linspace(0.0, 1.0, points)
    ll = [_mixture_loglik(w, gp[keep], gc[keep], a[keep]) for w in ws]
    return float(ws[int(np.argmax(ll))])


def mcf_probability(gp: ProbabilityField, gc: ProbabilityField, w: float) -> ProbabilityField:
    """Cellwise ``w * gp + (1 - w) * gc``."""
    if not 0 <= w <= 1:
        raise ValueError("w must lie in [0, 1]")
    check_same_grid(gp, gc)
    return ProbabilityField(gp.grid, w * gp.values + (1.0 - w) * gc.values,
                            gp.year, gp.month, gp.lead)


def mcf_binary(p: ProbabilityField) -> BinaryField:
    """Ice wherever the probability is at least one half."""
    v = p.values
    return BinaryField(p.grid, np.where(np.isnan(v), np.nan, (v >= 0.5).astype(float)),
                       p.year, p.month, p.lead)


WEIGHT_COLUMNS = ["month", "lead", "year", "w", "n_triples", "iterations", "final_loglik", "fallback"]


def write_weight_table(path, rows: Sequence[tuple]):
    """``rows`` are ``(year, MixtureWeight)`` pairs."""
    out = [(m.month, m.lead, int(y), m.w, m.n_triples, m.iterations, m.final_loglik, int(m.fallback))
           for y, m in rows]
    write_csv(path, WEIGHT_COLUMNS, out)


def read_weight_table(path) -> list:
    return [{"month": int(r["month"]), "lead": float(r["lead"]), "year": int(r["year"]),
             "w": float(r["w"]), "n_triples": int(r["n_triples"]),
             "iterations": int(r["iterations"]), "final_loglik": float(r["final_loglik"]),
             "fallback": bool(int(r["fallback"]))}
            for r in read_csv(path)]


class MixtureForecaster(BaseEstimator):
    """Fit the mixture weight on past years, then blend new component fields.

    Parameters
    ----------
    w0, tol, max_iter :
        EM settings.
    fallback_weight : float
        Used, and logged, when every training pair is degenerate.
    """

    def __init__(self, w0=0.5, tol=1e-8, max_iter=10_000, fallback_weight=0.5):
        self.w0 = w0
        self.tol = tol
        self.max_iter = max_iter
        self.fallback_weight = fallback_weight

    def fit(self, obs, gp, gc, weights, **labels):
        p, c, a = training_arrays(obs, gp, gc, weights)
        try:
            self.weight_ = fit_weight(p, c, a, self.w0, self.tol, self.max_iter,
                                      window=len(obs), **labels)
        except WeightUndefinedError as exc:
            log.warning("%s; falling back to w=%s", exc, self.fallback_weight)
            self.weight_ = MixtureWeight(self.fallback_weight, np.zeros(0), 0, 0,
                                         window=len(obs), fallback=True, **labels)
        self.w_ = self.weight_.w
        return self

    def predict_proba(self, gp: ProbabilityField, gc: ProbabilityField) -> ProbabilityField:
        check_fitted(self, "w_")
        return mcf_probability(gp, gc, self.w_)

    def predict(self, gp: ProbabilityField, gc: ProbabilityField) -> BinaryField:
        return mcf_binary(self.predict_proba(gp, gc))
