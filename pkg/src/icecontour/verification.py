"""Area-weighted Brier scores, reliability-diagram bins and score tables."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import GridError
from .io import write_csv

log = logging.getLogger(__name__)

SEASONS = {"JFM": (1, 2, 3), "AMJ": (4, 5, 6), "JAS": (7, 8, 9), "OND": (10, 11, 12)}


def _values(f):
    return np.asarray(getattr(f, "values", f), dtype=float)


def brier(forecast, obs, weights) -> float:
    """Single-year score ``sum_s a_s (f_s - o_s)^2``.

    ``weights`` must sum to one over the scored cells; cells with zero weight
    are ignored, and any positively weighted cell must have both a forecast
    and an observation.
    """
    f, o, a = _values(forecast), _values(obs), np.asarray(weights, dtype=float)
    if not (f.shape == o.shape == a.shape):
        raise GridError(f"shape mismatch: forecast {f.shape}, obs {o.shape}, weights {a.shape}")
    grid_f, grid_o = getattr(forecast, "grid", None), getattr(obs, "grid", None)
    if grid_f is not None and grid_o is not None and grid_f != grid_o:
        raise GridError("forecast and observation use different grids")
    scored = a > 0
    if np.any(np.isnan(f[scored]) | np.isnan(o[scored])):
        raise GridError("weighted cells without a forecast or observation")
    if not np.isclose(a.sum(), 1.0, rtol=0, atol=1e-9):
        raise GridError(f"weights sum to {a.sum():.12g}, expected 1")
    d = f[scored] - o[scored]
    return float(np.sum(a[scored] * d * d))


def mean_brier(forecasts: Sequence, observations: Sequence, weights) -> float:
    """Brier score averaged over years."""
    scores = [brier(f, o, weights) for f, o in zip(forecasts, observations, strict=True)]
    if not scores:
        raise ValueError("no years to score")
    return float(np.mean(scores))


@dataclass(frozen=True)
class ReliabilityBins:
    edges: np.ndarray
    mean_prob: np.ndarray           # NaN for empty bins
    obs_freq: np.ndarray            # NaN for empty bins
    weight: np.ndarray
    count: np.ndarray

    @property
    def populated(self):
        return self.count > 0

    def max_deviation(self) -> float:
        """Largest |observed frequency - mean forecast| over populated bins."""
        ok = self.populated
        return float(np.max(np.abs(self.obs_freq[ok] - self.mean_prob[ok])))

    def slope(self) -> float:
        """Weighted least-squares slope of observed frequency on mean forecast."""
        ok = self.populated
        x, y, w = self.mean_prob[ok], self.obs_freq[ok], self.weight[ok]
        xm = np.sum(w * x) / w.sum()
        ym = np.sum(w * y) / w.sum()
        return float(np.sum(w * (x - xm) * (y - ym)) / np.sum(w * (x - xm) ** 2))

    def rows(self):
        for k in range(len(self.count)):
            yield (self.edges[k], self.edges[k + 1], self.mean_prob[k], self.obs_freq[k],
                   self.weight[k], int(self.count[k]))

    def to_csv(self, path):
        rows = [tuple(None if isinstance(v, float) and np.isnan(v) else v for v in r)
                for r in self.rows()]
        write_csv(path, ["lo", "hi", "mean_prob", "obs_freq", "weight", "count"], rows)


def bin_index(p, bins: int) -> np.ndarray:
    """Equal-width bins on [0, 1], right-inclusive; 0 falls in the first bin."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    return np.clip(np.searchsorted(edges, p, side="left") - 1, 0, bins - 1)


def reliability(pairs: Iterable, bins: int = 10, weighting: str = "area", area=None) -> ReliabilityBins:
    """Pool (forecast, observation) cells over ``pairs`` and bin them by forecast.

    Parameters
    ----------
    pairs : iterable of (forecast, obs)
        Fields or arrays; cells missing in either are skipped.
    weighting : {"area", "equal"}
        Weight cells by ``area`` (uniform when not given) or count each once.
    """
    if bins < 2:
        raise ValueError("need at least two bins")
    if weighting not in ("area", "equal"):
        raise ValueError(f"unknown weighting {weighting!r}")
    ps, os_, ws = [], [], []
    for f, o in pairs:
        f, o = _values(f), _values(o)
        a = np.ones_like(f) if area is None or weighting == "equal" else np.asarray(area, dtype=float)
        ok = ~(np.isnan(f) | np.isnan(o)) & (a > 0)
        ps.append(f[ok])
        os_.append(o[ok])
        ws.append(a[ok])
    p = np.concatenate(ps) if ps else np.zeros(0)
    o = np.concatenate(os_) if os_ else np.zeros(0)
    w = np.concatenate(ws) if ws else np.zeros(0)
    idx = bin_index(p, bins)
    count = np.bincount(idx, minlength=bins)
    wsum = np.bincount(idx, weights=w, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_prob = np.bincount(idx, weights=w * p, minlength=bins) / wsum
        obs_freq = np.bincount(idx, weights=w * o, minlength=bins) / wsum
    empty = count == 0
    mean_prob[empty] = np.nan
    obs_freq[empty] = np.nan
    return ReliabilityBins(np.linspace(0.0, 1.0, bins + 1), mean_prob, obs_freq, wsum, count)


def season_of(month: int) -> str:
    for name, months in SEASONS.items():
        if month in months:
            return name
    raise ValueError(f"invalid month {month}")


@dataclass
class ScoreTable:
    """Rows of ``(method, month, lead, year, brier)`` with aggregate views."""

    rows: list = field(default_factory=list)

    COLUMNS = ("method", "month", "lead", "year", "brier")

    def add(self, method, month, lead, year, score):
        if not 0 <= score <= 1:
            raise ValueError(f"Brier score {score} outside [0, 1]")
        self.rows.append((method, int(month), float(lead), int(year), float(score)))

    def __len__(self):
        return len(self.rows)

    def _group(self, key: Callable):
        groups = defaultdict(list)
        for r in self.rows:
            groups[key(r)].append(r[4])
        return {k: float(np.mean(v)) for k, v in sorted(groups.items())}

    def per_month(self) -> dict:
        """Mean over years for each (method, month, lead)."""
        return self._group(lambda r: (r[0], r[1], r[2]))

    def seasonal(self) -> dict:
        """Mean over years and the three months of each season, per (method, season, lead)."""
        return self._group(lambda r: (r[0], season_of(r[1]), r[2]))

    def overall(self) -> dict:
        return self._group(lambda r: r[0])

    def to_csv(self, path):
        write_csv(path, list(self.COLUMNS), sorted(self.rows))

    def write_views(self, directory):
        directory = Path(directory)
        self.to_csv(directory / "scores.csv")
        write_csv(directory / "scores_by_month.csv", ["method", "month", "lead", "mean_brier"],
                  [(*k, v) for k, v in self.per_month().items()])
        write_csv(directory / "scores_by_season.csv", ["method", "season", "lead", "mean_brier"],
                  [(*k, v) for k, v in self.seasonal().items()])
        write_csv(directory / "scores_overall.csv", ["method", "mean_brier"],
                  list(self.overall().items()))


@dataclass
class SweepResult:
    scores: ScoreTable
    reliability: dict               # method -> ReliabilityBins
    missing: list                   # (method, month, lead, year, reason)


def sweep(methods: dict, observe: Callable, weights, tuples, bins: int = 10,
          weighting: str = "equal", area=None) -> SweepResult:
    """Score every method on every (month, lead, year) tuple.

    ``methods`` maps a name to ``f(month, lead, year) -> forecast field`` and
    ``observe(month, lead, year)`` returns the observed binary field. A
    missing input (``FileNotFoundError`` or ``KeyError``) is recorded and the
    sweep continues.
    """
    table = ScoreTable()
    pairs = defaultdict(list)
    missing = []
    for month, lead, year in tuples:
        try:
            obs = observe(month, lead, year)
        except (FileNotFoundError, KeyError) as exc:
            missing.extend((m, month, lead, year, str(exc)) for m in methods)
            continue
        for name, make in methods.items():
            try:
                fc = make(month, lead, year)
            except (FileNotFoundError, KeyError) as exc:
                missing.append((name, month, lead, year, str(exc)))
                continue
            table.add(name, month, lead, year, brier(fc, obs, weights))
            pairs[name].append((fc, obs))
    for m in missing:
        log.warning("missing input for %s month=%s lead=%s year=%s: %s", *m)
    rel = {name: reliability(p, bins, weighting, area) for name, p in pairs.items()}
    return SweepResult(table, rel, missing)


def window_sweep(score_for_window: Callable, windows: Sequence[int]) -> list:
    """``(window, mean Brier)`` rows, one per training-window length."""
    return [(int(k), float(np.mean(score_for_window(int(k))))) for k in windows]


def plot_reliability(curves: dict, path):
    """Reliability diagram of several methods as a static SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], color="0.6", lw=1)
    for name, rb in curves.items():
        ok = rb.populated
        ax.plot(rb.mean_prob[ok], rb.obs_freq[ok], marker="o", label=name)
    ax.set_xlabel("forecast probability")
    ax.set_ylabel("observed frequency")
    ax.legend(frameon=False)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_brier_by_lead(table: ScoreTable, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_lead = table._group(lambda r: (r[0], r[2]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in sorted({k[0] for k in by_lead}):
        pts = sorted((k[1], v) for k, v in by_lead.items() if k[0] == method)
        ax.plot(*zip(*pts), marker="o", label=method)
    ax.set_xlabel("lead (months)")
    ax.set_ylabel("mean Brier score")
    ax.legend(frameon=False)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
