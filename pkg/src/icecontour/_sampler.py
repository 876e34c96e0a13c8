"""Single-site Metropolis kernel for the logit-proportion normal model.

The covariance is ``diag(sigma) C(kappa) diag(sigma)``. With the scatter
matrix ``G = sum_j (x_j - mu)(x_j - mu)^T`` kept current, mu and sigma moves
cost O(n) each and only kappa moves need a fresh Cholesky factor.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def corr_inverse(dist, kappa):
    """Inverse and log-determinant of exp(-dist / kappa); jitter once if needed."""
    n = dist.shape[0]
    C = np.exp(-dist / kappa)
    ok = True
    try:
        L = np.linalg.cholesky(C)
    except Exception:
        ok = False
    if not ok:
        for i in range(n):
            C[i, i] += 1e-10
        L = np.linalg.cholesky(C)
    logdet = 0.0
    for i in range(n):
        logdet += 2.0 * np.log(L[i, i])
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv, logdet


@njit(cache=True)
def _scatter(X, mu):
    P, n = X.shape
    G = np.zeros((n, n))
    for j in range(P):
        for a in range(n):
            ra = X[j, a] - mu[a]
            for b in range(n):
                G[a, b] += ra * (X[j, b] - mu[b])
    return G


@njit(cache=True)
def _log_prior(mu, mu0, prec0):
    s = 0.0
    for i in range(mu.shape[0]):
        d = mu[i] - mu0[i]
        s -= 0.5 * prec0[i] * d * d
    return s


@njit(cache=True)
def run_block(X, dist, mu0, prec0, sig_lo, sig_hi, kap_lo, kap_hi,
              mu, sig, kap, step_mu, step_sig, step_kap,
              z_mu, z_sig, z_kap, lu_mu, lu_sig, lu_kap,
              upd_mu, upd_sig, upd_kap,
              out_mu, out_sig, out_kap, out_lp, acc_mu, acc_sig, acc_kap):
    """Advance the chain ``z_mu.shape[0]`` iterations in place.

    ``z_*`` are standard normal proposal draws and ``lu_*`` log-uniforms.
    State arrays ``mu``, ``sig`` and the length-1 ``kap`` are updated in
    place; per-iteration states go to the ``out_*`` arrays.
    """
    P, n = X.shape
    B = z_mu.shape[0]
    xbar = np.zeros(n)
    for j in range(P):
        for a in range(n):
            xbar[a] += X[j, a]
    xbar /= P
    G = _scatter(X, mu)
    Cinv, logdetC = corr_inverse(dist, kap[0])
    W = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            W[a, b] = Cinv[a, b] / (sig[a] * sig[b])
    e = xbar - mu
    v = W @ e
    Q = np.sum(W * G)
    logsig = 0.0
    for a in range(n):
        logsig += np.log(sig[a])
    for t in range(B):
        if upd_mu:
            for i in range(n):
                d = step_mu[i] * z_mu[t, i]
                dQ = -2.0 * d * P * v[i] + P * d * d * W[i, i]
                old = mu[i] - mu0[i]
                new = old + d
                dlp = -0.5 * dQ - 0.5 * prec0[i] * (new * new - old * old)
                if lu_mu[t, i] < dlp:
                    s_i = P * e[i]
                    for a in range(n):
                        if a != i:
                            G[i, a] -= d * P * e[a]
                            G[a, i] = G[i, a]
                    G[i, i] += -2.0 * d * s_i + P * d * d
                    e[i] -= d
                    for a in range(n):
                        v[a] -= d * W[a, i]
                    Q += dQ
                    mu[i] += d
                    acc_mu[i] += 1
        if upd_sig:
            for i in range(n):
                prop = sig[i] + step_sig[i] * z_sig[t, i]
                if prop <= sig_lo[i] or prop >= sig_hi[i]:
                    continue
                r = sig[i] / prop
                cross = 0.0
                for a in range(n):
                    if a != i:
                        cross += W[i, a] * G[i, a]
                dQ = (r * r - 1.0) * W[i, i] * G[i, i] + 2.0 * (r - 1.0) * cross
                dlogdet = 2.0 * np.log(prop / sig[i])
                dlp = -0.5 * P * dlogdet - 0.5 * dQ
                if lu_sig[t, i] < dlp:
                    wii = W[i, i]
                    vi_rest = v[i] - wii * e[i]
                    for a in range(n):
                        if a != i:
                            v[a] += (r - 1.0) * W[a, i] * e[i]
                            W[a, i] *= r
                            W[i, a] = W[a, i]
                    W[i, i] = wii * r * r
                    v[i] = r * vi_rest + r * r * wii * e[i]
                    Q += dQ
                    logsig += np.log(prop / sig[i])
                    sig[i] = prop
                    acc_sig[i] += 1
        if upd_kap:
            prop = kap[0] + step_kap * z_kap[t]
            if kap_lo < prop < kap_hi:
                Cn, ldn = corr_inverse(dist, prop)
                Wn = np.empty((n, n))
                for a in range(n):
                    for b in range(n):
                        Wn[a, b] = Cn[a, b] / (sig[a] * sig[b])
                Qn = np.sum(Wn * G)
                dlp = -0.5 * P * (ldn - logdetC) - 0.5 * (Qn - Q)
                if lu_kap[t] < dlp:
                    kap[0] = prop
                    Cinv = Cn
                    logdetC = ldn
                    W = Wn
                    v = W @ e
                    Q = Qn
                    acc_kap[0] += 1
        for a in range(n):
            out_mu[t, a] = mu[a]
            out_sig[t, a] = sig[a]
        out_kap[t] = kap[0]
        logdet = 2.0 * logsig + logdetC
        out_lp[t] = -0.5 * P * logdet - 0.5 * Q + _log_prior(mu, mu0, prec0)
