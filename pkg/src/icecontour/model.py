"""Bayesian contour model: priors, covariance, Metropolis fitting and contour generation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm
from sklearn.base import BaseEstimator

from . import _sampler
from ._validation import check_fitted, check_matrix
from .geometry import (COASTAL, RADIAL, RegionGeometry, contour_from_lengths,
                       lengths_from_proportions, rasterize,
                       snap_to_boundary)
from .grid import CellMask, ProbabilityField
from .io import atomic_write_text, read_csv

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """The posterior could not be sampled."""


def logit_clamped(pi, eps=0.01):
    """``logit`` of ``pi`` clamped to ``[eps, 1 - eps]``."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    return logit(np.clip(pi, eps, 1 - eps))


def ilogit(x):
    return expit(x)


def sigma_for_mass(m, M, gamma=0.99):
    """Standard deviation putting mass ``gamma`` of a normal centred at (m+M)/2 inside [m, M]."""
    if np.any(np.asarray(M) <= np.asarray(m)):
        raise ValueError(f"need M > m, got m={m}, M={M}")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return ((M - m) / 2.0) / norm.ppf((1.0 + gamma) / 2.0)


@dataclass(frozen=True)
class ModelConfig:
    eps: float = 0.01
    prior_halfwidth: float = 0.125
    prior_mass: float = 0.99
    sigma_lower: float = 0.01
    delta1: Optional[float] = None      # defaults to eps
    delta2: Optional[float] = None      # defaults to 1 - eps
    kappa_lower: float = 0.05
    kappa_upper: float = 20.0
    iterations: int = 55_000
    burn_in: int = 5_000
    training_years: int = 10
    target_acceptance: float = 0.3
    block: int = 100

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if not self.sigma_lower < self.sigma_upper:
            raise ValueError("sigma prior needs lower < upper")
        if not 0 < self.kappa_lower < self.kappa_upper:
            raise ValueError("kappa prior needs 0 < lower < upper")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn-in must be shorter than the chain")

    @property
    def sigma_upper(self) -> float:
        d1 = self.eps if self.delta1 is None else self.delta1
        d2 = 1 - self.eps if self.delta2 is None else self.delta2
        return float(sigma_for_mass(logit(d1), logit(d2), self.prior_mass))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class PriorSpec:
    mu0: np.ndarray
    var0: np.ndarray            # diagonal of Lambda_0
    sigma_bounds: tuple         # (lower, upper)
    kappa_bounds: tuple


def build_prior(shifted_proportions, cfg: ModelConfig = ModelConfig()) -> PriorSpec:
    """Prior on the mean logit proportions from contour-shifted ensemble proportions."""
    p = np.asarray(shifted_proportions, dtype=float)
    eps, hw = cfg.eps, cfg.prior_halfwidth
    lo = logit(np.maximum(p - hw, eps))
    hi = logit(np.minimum(p + hw, 1 - eps))
    sd = sigma_for_mass(lo, hi, cfg.prior_mass)
    return PriorSpec(logit_clamped(p, eps), np.asarray(sd) ** 2,
                     (cfg.sigma_lower, cfg.sigma_upper), (cfg.kappa_lower, cfg.kappa_upper))


def line_distances(geom_or_kind, angles=None, index=None) -> np.ndarray:
    """Pairwise distances driving the correlation: index gaps or minor-arc angles."""
    if isinstance(geom_or_kind, RegionGeometry):
        kind, angles = geom_or_kind.kind, geom_or_kind.angles
    else:
        kind = geom_or_kind
    if index is None:
        index = np.arange(len(angles))
    index = np.asarray(index)
    if kind == RADIAL:
        th = np.asarray(angles, dtype=float)[index]
        d = np.abs(th[:, None] - th[None, :]) % (2 * np.pi)
        return np.minimum(d, 2 * np.pi - d)
    return np.abs(index[:, None] - index[None, :]).astype(float)


def build_covariance(sigma, kappa, geom) -> np.ndarray:
    """Exponential covariance ``sigma_i sigma_j exp(-d_ij / kappa)``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or kappa <= 0:
        raise ValueError("sigma and kappa must be positive")
    dist = line_distances(geom) if isinstance(geom, RegionGeometry) else np.asarray(geom)
    cov = np.outer(sigma, sigma) * np.exp(-dist / kappa)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-10 * np.eye(len(sigma))
    return cov


def exact_mean(chain) -> np.ndarray:
    """Column means via correctly rounded sums, so re-imported traces match bit for bit."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        return np.float64(math.fsum(chain) / len(chain))
    return np.array([math.fsum(c) / len(c) for c in chain.T])


@dataclass
class ContourPosterior:
    """Chains (including burn-in) and posterior means for one region.

    ``free`` lists the modelled line indices; ``fixed`` maps the remaining
    line indices to their held proportion (0 or 1). ``constant`` is set when
    the whole region bypassed fitting.
    """

    n_lines: int
    free: np.ndarray
    fixed: dict
    burn_in: int
    mu_chain: np.ndarray = None
    sigma_chain: np.ndarray = None
    kappa_chain: np.ndarray = None
    logpost: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    constant: Optional[float] = None
    seed: Optional[int] = None

    @property
    def n_iter(self) -> int:
        return 0 if self.kappa_chain is None else len(self.kappa_chain)

    @property
    def mu_mean(self):
        return exact_mean(self.mu_chain[self.burn_in:])

    @property
    def sigma_mean(self):
        return exact_mean(self.sigma_chain[self.burn_in:])

    @property
    def kappa_mean(self):
        return float(exact_mean(self.kappa_chain[self.burn_in:]))

    def summary(self) -> dict:
        out = {"n_lines": self.n_lines, "free": [int(i) for i in self.free],
               "fixed": {str(k): float(v) for k, v in sorted(self.fixed.items())},
               "constant": self.constant, "seed": self.seed, "burn_in": self.burn_in,
               "iterations": self.n_iter}
        if self.constant is None and len(self.free):
            out.update(mu=self.mu_mean.tolist(), sigma=self.sigma_mean.tolist(),
                       kappa=self.kappa_mean,
                       acceptance={k: np.asarray(v).tolist() for k, v in self.acceptance.items()})
        return out


@dataclass(frozen=True)
class PosteriorMeans:
    """The three posterior means needed to generate contours."""

    n_lines: int
    free: np.ndarray
    fixed: dict
    mu: np.ndarray
    sigma: np.ndarray
    kappa: float
    constant: Optional[float] = None

    @classmethod
    def from_posterior(cls, post: ContourPosterior):
        if post.constant is not None or not len(post.free):
            return cls(post.n_lines, np.asarray(post.free), dict(post.fixed), np.zeros(0),
                       np.zeros(0), 1.0, post.constant)
        return cls(post.n_lines, np.asarray(post.free), dict(post.fixed), post.mu_mean,
                   post.sigma_mean, post.kappa_mean)

    @classmethod
    def from_summary(cls, d):
        fixed = {int(k): float(v) for k, v in d["fixed"].items()}
        return cls(d["n_lines"], np.asarray(d["free"], dtype=int), fixed,
                   np.asarray(d.get("mu", []), dtype=float),
                   np.asarray(d.get("sigma", []), dtype=float),
                   float(d.get("kappa", 1.0)), d.get("constant"))


def find_fixed_lines(props, kind=COASTAL, fixable=()) -> dict:
    """Lines held at 0 or 1 instead of modelled.

    Runs of lines at the start or end of a coastal region that are 0 (or 1)
    in every training year are fixed, as are ``fixable`` lines that are 1 in
    every year.
    """
    props = np.atleast_2d(np.asarray(props, dtype=float))
    n = props.shape[1]
    fixed = {}

    def const(i):
        col = props[:, i]
        if np.all(col == 0):
            return 0.0
        if np.all(col == 1):
            return 1.0
        return None

    if kind == COASTAL:
        for order in (range(n), range(n - 1, -1, -1)):
            for i in order:
                c = const(i)
                if c is None:
                    break
                fixed[i] = c
    for i in fixable:
        if 0 <= i < n and np.all(props[:, i] == 1):
            fixed[i] = 1.0
    return fixed


def fit_posterior(obs, prior: PriorSpec, geom, cfg: ModelConfig = ModelConfig(), seed=0, *,
                  fixed: Optional[dict] = None, fixed_sigma=None, fixed_kappa=None,
                  init=None) -> ContourPosterior:
    """Sample the posterior of (mu, sigma, kappa) with single-site Metropolis.

    ``obs`` is the P x n matrix of transformed (logit) proportions of the
    training years; ``prior`` covers all n lines. Lines in ``fixed`` are
    excluded from the parameter vector. ``fixed_sigma`` / ``fixed_kappa``
    hold those parameters constant (used for conjugate checks).
    """
    obs = check_matrix(obs, "obs")
    P, n = obs.shape
    if P < 2:
        raise FitError("need at least two training years")
    fixed = dict(fixed or {})
    free = np.array([i for i in range(n) if i not in fixed], dtype=int)
    post = ContourPosterior(n, free, fixed, cfg.burn_in, seed=seed)
    if len(free) == 0:
        return post
    kind = geom.kind if isinstance(geom, RegionGeometry) else geom
    angles = geom.angles if isinstance(geom, RegionGeometry) else None
    if kind == RADIAL and angles is None:
        raise FitError("radial fits need the region geometry")
    if angles is None:
        angles = np.zeros(n)
    dist = line_distances(kind, angles, free)
    X = np.ascontiguousarray(obs[:, free])
    mu0 = np.asarray(prior.mu0, dtype=float)[free]
    prec0 = 1.0 / np.asarray(prior.var0, dtype=float)[free]
    m = len(free)
    s_lo, s_hi = prior.sigma_bounds
    k_lo, k_hi = prior.kappa_bounds
    sig_lo = np.full(m, s_lo)
    sig_hi = np.full(m, s_hi)

    # starting point: data spread, precision-weighted mean
    width = s_hi - s_lo
    if fixed_sigma is not None:
        sig = np.broadcast_to(np.asarray(fixed_sigma, dtype=float), (n,))[free].copy()
    else:
        sig = np.clip(X.std(axis=0, ddof=1), s_lo + 1e-3 * width, s_hi - 1e-3 * width)
    kap = np.array([float(fixed_kappa) if fixed_kappa is not None else
                    float(np.clip(1.0, k_lo + 1e-3, k_hi - 1e-3))])
    if init is not None:
        mu = np.asarray(init, dtype=float)[free].copy()
    else:
        dprec = P / sig ** 2
        mu = (prec0 * mu0 + dprec * X.mean(axis=0)) / (prec0 + dprec)

    rng = np.random.default_rng(seed)
    step_mu = np.maximum(sig / np.sqrt(P), 1e-3)
    step_sig = np.maximum(0.3 * sig / np.sqrt(P), 1e-3)
    step_kap = 0.5
    upd_mu, upd_sig, upd_kap = True, fixed_sigma is None, fixed_kappa is None

    N = cfg.iterations
    out_mu = np.empty((N, m))
    out_sig = np.empty((N, m))
    out_kap = np.empty(N)
    out_lp = np.empty(N)
    tot_mu = np.zeros(m)
    tot_sig = np.zeros(m)
    tot_kap = np.zeros(1)
    t = 0
    k_adapt = 0
    target = cfg.target_acceptance
    while t < N:
        B = min(cfg.block, N - t)
        if t < cfg.burn_in:
            B = min(B, cfg.burn_in - t)
        z_mu = rng.standard_normal((B, m))
        z_sig = rng.standard_normal((B, m))
        z_kap = rng.standard_normal(B)
        lu_mu = np.log(rng.random((B, m)))
        lu_sig = np.log(rng.random((B, m)))
        lu_kap = np.log(rng.random(B))
        acc_mu = np.zeros(m)
        acc_sig = np.zeros(m)
        acc_kap = np.zeros(1)
        try:
            _sampler.run_block(X, dist, mu0, prec0, sig_lo, sig_hi, k_lo, k_hi,
                               mu, sig, kap, step_mu, step_sig, step_kap,
                               z_mu, z_sig, z_kap, lu_mu, lu_sig, lu_kap,
                               upd_mu, upd_sig, upd_kap,
                               out_mu[t:t + B], out_sig[t:t + B], out_kap[t:t + B],
                               out_lp[t:t + B], acc_mu, acc_sig, acc_kap)
        except Exception as exc:  # numba surfaces LinAlgError generically
            raise FitError(f"covariance not positive definite at iteration {t}: {exc}") from exc
        if t < cfg.burn_in:
            # Robbins-Monro scaling of proposal widths toward the target rate
            k_adapt += 1
            gain = 1.0 / np.sqrt(k_adapt)
            step_mu = step_mu * np.exp(gain * (acc_mu / B - target))
            step_sig = step_sig * np.exp(gain * (acc_sig / B - target))
            step_kap = float(step_kap * np.exp(gain * (acc_kap[0] / B - target)))
            step_sig = np.minimum(step_sig, width)
            step_kap = min(step_kap, k_hi - k_lo)
        else:
            tot_mu += acc_mu
            tot_sig += acc_sig
            tot_kap += acc_kap
        t += B
    if not np.all(np.isfinite(out_lp)):
        raise FitError("log posterior became non-finite")
    kept = max(N - cfg.burn_in, 1)
    post.mu_chain = out_mu
    post.sigma_chain = out_sig
    post.kappa_chain = out_kap
    post.logpost = out_lp
    post.acceptance = {"mu": tot_mu / kept, "sigma": tot_sig / kept, "kappa": float(tot_kap[0] / kept)}
    return post


def draw_proportions(means: PosteriorMeans, geom, count, rng) -> np.ndarray:
    """``count`` x n matrix of line proportions drawn from the fitted model."""
    n = means.n_lines
    out = np.empty((count, n))
    if means.constant is not None:
        out[:] = means.constant
        return out
    for i, v in means.fixed.items():
        out[:, i] = v
    if len(means.free):
        dist = line_distances(geom.kind, geom.angles, means.free)
        cov = build_covariance(means.sigma, means.kappa, dist)
        L = np.linalg.cholesky(cov)
        z = rng.standard_normal((count, len(means.free)))
        out[:, means.free] = ilogit(means.mu + z @ L.T)
    return out


def generate_contours(means, geom: RegionGeometry, count=100, seed=0, snap_dist=12.5,
                      eta0=None, growth=2.0) -> list:
    """Draw ``count`` contours from the fitted model's posterior means."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if isinstance(means, ContourPosterior):
        means = PosteriorMeans.from_posterior(means)
    rng = np.random.default_rng(seed)
    props = draw_proportions(means, geom, count, rng)
    contours = []
    for k in range(count):
        lengths = snap_to_boundary(geom, lengths_from_proportions(geom, props[k]), snap_dist)
        try:
            contours.append(contour_from_lengths(geom, lengths, eta0=eta0, growth=growth))
        except RuntimeError as exc:
            raise type(exc)(f"sample {k}: {exc}") from exc
    return contours


def contour_probability(contours, mask: CellMask, region) -> np.ndarray:
    """Fraction of contours whose rasterization covers each cell of the region."""
    acc = np.zeros(mask.grid.shape)
    for c in contours:
        acc += np.nan_to_num(rasterize(c, mask.grid, mask, region).values)
    return acc / max(len(contours), 1)


def export_traces(post: ContourPosterior, path) -> list:
    """One CSV per parameter (``iteration,value,burn_in``); returns the written paths."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    N = post.n_iter
    it = np.arange(N)
    burn = (it < post.burn_in).astype(int)
    written = []

    def dump(name, values):
        lines = ["iteration,value,burn_in"]
        lines += [f"{i},{v!r},{b}" for i, v, b in zip(it.tolist(), values.tolist(), burn.tolist())]
        p = path / f"{name}.csv"
        atomic_write_text(p, "\n".join(lines) + "\n")
        written.append(p)

    for k, i in enumerate(post.free):
        dump(f"mu_{i}", post.mu_chain[:, k])
        dump(f"sigma_{i}", post.sigma_chain[:, k])
    dump("kappa", post.kappa_chain)
    return written


def load_trace(path):
    """Return ``(values, burn_in_flags)`` from a trace CSV."""
    rows = read_csv(path)
    values = np.array([float(r["value"]) for r in rows])
    burn = np.array([int(r["burn_in"]) for r in rows], dtype=bool)
    return values, burn


class ContourModel(BaseEstimator):
    """Estimator wrapper: ``fit`` on training-year proportions, then sample or predict.

    Parameters mirror :class:`ModelConfig`; ``geometry`` is the region's
    :class:`RegionGeometry`.
    """

    def __init__(self, geometry=None, eps=0.01, iterations=55_000, burn_in=5_000,
                 delta1=None, delta2=None, fixable_lines=(), n_contours=100,
                 snap_dist=12.5, random_state=0):
        self.geometry = geometry
        self.eps = eps
        self.iterations = iterations
        self.burn_in = burn_in
        self.delta1 = delta1
        self.delta2 = delta2
        self.fixable_lines = fixable_lines
        self.n_contours = n_contours
        self.snap_dist = snap_dist
        self.random_state = random_state

    def _config(self):
        return ModelConfig(eps=self.eps, iterations=self.iterations, burn_in=self.burn_in,
                           delta1=self.delta1, delta2=self.delta2)

    def fit(self, proportions, prior_proportions):
        """``proportions``: P x n observed line proportions; ``prior_proportions``: n shifted ones."""
        props = check_matrix(proportions, "proportions", lo=0.0, hi=1.0)
        cfg = self._config()
        geom = self.geometry
        if np.all(props == 0) or np.all(props == 1):
            value = float(props.flat[0])
            self.posterior_ = ContourPosterior(props.shape[1], np.zeros(0, int), {}, cfg.burn_in,
                                               constant=value, seed=self.random_state)
        else:
            fixed = find_fixed_lines(props, geom.kind, self.fixable_lines)
            prior = build_prior(prior_proportions, cfg)
            self.posterior_ = fit_posterior(logit_clamped(props, cfg.eps), prior, geom, cfg,
                                            seed=self.random_state, fixed=fixed)
        self.means_ = PosteriorMeans.from_posterior(self.posterior_)
        return self

    def sample_contours(self, count=None, seed=None):
        check_fitted(self, "means_")
        return generate_contours(self.means_, self.geometry, count or self.n_contours,
                                 self.random_state if seed is None else seed, self.snap_dist)

    def predict_proba(self, mask: CellMask, seed=None) -> ProbabilityField:
        """Per-cell fraction of generated contours covering the cell (region cells only)."""
        check_fitted(self, "means_")
        region = self.geometry.region
        if self.means_.constant is not None:
            p = np.full(mask.grid.shape, self.means_.constant)
        else:
            p = contour_probability(self.sample_contours(seed=seed), mask, region)
        p = np.where(mask.region_cells(region), p, np.nan)
        return ProbabilityField(mask.grid, p)
