import sys

import numpy as np
import pytest

from icecontour.grid import LAND, OCEAN, CellMask, GridSpec


def coastal_mask(nrows=12, ncols=10, islands=(), cell=25.0):
    """Land along the bottom row, optional rectangular islands, everything else region 1."""
    grid = GridSpec(nrows, ncols, cell, cell)
    labels = np.full(grid.shape, OCEAN, dtype=np.uint8)
    labels[0, :] = LAND
    for r0, r1, c0, c1 in islands:
        labels[r0:r1, c0:c1] = LAND
    return CellMask(grid, labels, np.where(labels == OCEAN, 1, 0))


def radial_mask(n=40, cell=25.0):
    """Square ocean basin with a land rim, region 1 inside."""
    grid = GridSpec(n, n, cell, cell)
    labels = np.full(grid.shape, OCEAN, dtype=np.uint8)
    labels[0, :] = labels[-1, :] = labels[:, 0] = labels[:, -1] = LAND
    return CellMask(grid, labels, np.where(labels == OCEAN, 1, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_coast():
    return coastal_mask()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)


def simulate_lines(rng, n=40, P=40, kappa=3.0):
    """Truth (mu, sigma, kappa) and P draws of n logit proportions from the contour model."""
    from icecontour.model import build_covariance, line_distances

    mu = rng.uniform(-2.0, 2.0, n)
    sigma = rng.uniform(0.3, 1.0, n)
    cov = build_covariance(sigma, kappa, line_distances("coastal", np.zeros(n)))
    X = rng.multivariate_normal(mu, cov, size=P)
    return mu, sigma, kappa, X


def batch_means_se(chain, batches=50):
    """Monte-Carlo standard error of the chain mean from non-overlapping batch means."""
    chain = np.asarray(chain, dtype=float)
    k = len(chain) // batches
    means = chain[: k * batches].reshape(batches, k, *chain.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def conjugate_posterior(X, sigma, kappa, mu0, var0):
    """Analytic normal posterior of mu given fixed sigma and kappa."""
    from icecontour.model import build_covariance, line_distances

    n = X.shape[1]
    cov = build_covariance(sigma, kappa, line_distances("coastal", np.zeros(n)))
    prec = np.linalg.inv(cov)
    A = np.diag(1.0 / var0) + X.shape[0] * prec
    cov_post = np.linalg.inv(A)
    mean = cov_post @ (mu0 / var0 + X.shape[0] * prec @ X.mean(axis=0))
    return mean, cov_post
