"""Hot loops compiled with numba.

Every routine here consumes pre-drawn standard variates, so results are a
pure function of the inputs and match the numpy twin in ``_kernels_numpy``.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


@njit(cache=True, nogil=True)
def _chol_penta(a0, a1, a2, l0, l1, l2):
    # Lower Cholesky of a symmetric pentadiagonal matrix given by its
    # diagonal a0, first super-diagonal a1 and second super-diagonal a2.
    m = a0.shape[0]
    logdet = 0.0
    for i in range(m):
        v2 = 0.0
        v1 = 0.0
        if i >= 2:
            v2 = a2[i - 2] / l0[i - 2]
        if i >= 1:
            v1 = a1[i - 1]
            if i >= 2:
                v1 -= v2 * l1[i - 1]
            v1 /= l0[i - 1]
        d = a0[i] - v1 * v1 - v2 * v2
        if not d > 0.0:
            return np.nan
        l2[i] = v2
        l1[i] = v1
        l0[i] = math.sqrt(d)
        logdet += 2.0 * math.log(l0[i])
    return logdet


@njit(cache=True, nogil=True)
def _solve_penta(l0, l1, l2, b, x):
    m = l0.shape[0]
    for i in range(m):
        s = b[i]
        if i >= 1:
            s -= l1[i] * x[i - 1]
        if i >= 2:
            s -= l2[i] * x[i - 2]
        x[i] = s / l0[i]
    for i in range(m - 1, -1, -1):
        s = x[i]
        if i + 1 < m:
            s -= l1[i + 1] * x[i + 1]
        if i + 2 < m:
            s -= l2[i + 2] * x[i + 2]
        x[i] = s / l0[i]


@njit(cache=True, nogil=True)
def _qt_mul(q, y, out):
    m = q.shape[1]
    for j in range(m):
        out[j] = q[0, j] * y[j] + q[1, j] * y[j + 1] + q[2, j] * y[j + 2]


@njit(cache=True, nogil=True)
def _draw_g(ybar, alpha, sigma, q, r, rchol, qtq, z0, z1, g, gam, work):
    """One exact draw of g; returns (g'Kg, |ybar - g|^2) or NaNs on failure."""
    n = ybar.shape[0]
    m = n - 2
    l0 = work[0]
    l1 = work[1]
    l2 = work[2]
    u = work[3]
    c = work[4]
    a0 = work[5]
    a1 = work[6]
    a2 = work[7]
    # u = L_R^{-T} z1 has covariance R^{-1}
    for i in range(m - 1, -1, -1):
        s = z1[i]
        if i + 1 < m:
            s -= rchol[1, i] * u[i + 1]
        u[i] = s / rchol[0, i]
    sa = math.sqrt(alpha)
    for i in range(n):
        g[i] = ybar[i] + sigma * z0[i]
    for j in range(m):
        v = sigma * sa * u[j]
        g[j] += q[0, j] * v
        g[j + 1] += q[1, j] * v
        g[j + 2] += q[2, j] * v
    for j in range(m):
        a0[j] = r[0, j] + alpha * qtq[0, j]
        a1[j] = r[1, j] + alpha * qtq[1, j]
        a2[j] = alpha * qtq[2, j]
    ld = _chol_penta(a0, a1, a2, l0, l1, l2)
    if ld != ld:
        return np.nan, np.nan
    _qt_mul(q, g, c)
    _solve_penta(l0, l1, l2, c, gam)
    for j in range(m):
        v = alpha * gam[j]
        g[j] -= q[0, j] * v
        g[j + 1] -= q[1, j] * v
        g[j + 2] -= q[2, j] * v
    # Q'g = R gamma, hence g'Kg = gamma' R gamma
    quad = 0.0
    for j in range(m):
        quad += r[0, j] * gam[j] * gam[j]
        if j + 1 < m:
            quad += 2.0 * r[1, j] * gam[j] * gam[j + 1]
    rss = 0.0
    for i in range(n):
        d = ybar[i] - g[i]
        rss += d * d
    return quad, rss


@njit(cache=True, nogil=True)
def gibbs_block(
    ybar, s_ind, grp, q, r, rchol, qtq, hyp, reverse,
    g, tau, sig2, sig2_ind,
    z0, z1, gam_tau, gam_sig, gam_ind,
    record, out_tau, out_sig2, out_sig2_ind, g_sum, g_trace,
):
    """Run ``z0.shape[0]`` systematic-scan sweeps in place.

    ``hyp`` = (a_tau, b_tau, a_s, b_s, a_s_ind, b_s_ind). Returns 0 on
    success or a positive code naming the conditional that failed
    (1 = g, 2 = tau, 3 = sigma2, 4 = sigma2_ind).
    """
    T = z0.shape[0]
    G, n = ybar.shape
    m = n - 2
    J = s_ind.shape[0]
    work = np.empty((8, m))
    gam = np.empty(m)
    keep_trace = g_trace.shape[0] > 0
    a_tau, b_tau, a_s, b_s, a_si, b_si = hyp[0], hyp[1], hyp[2], hyp[3], hyp[4], hyp[5]
    for t in range(T):
        if reverse:
            for j in range(J):
                sig2_ind[j] = (0.5 * s_ind[j] + b_si) / gam_ind[t, j]
                if not (sig2_ind[j] > 0.0 and sig2_ind[j] < np.inf):
                    return 4
        for k in range(G):
            if reverse:
                rss = 0.0
                for i in range(n):
                    d = ybar[k, i] - g[k, i]
                    rss += d * d
                sig2[k] = (0.5 * rss + b_s) / gam_sig[t, k]
                if not (sig2[k] > 0.0 and sig2[k] < np.inf):
                    return 3
                quad = _quad_current(g[k], q, r, rchol, work)
                tau[k] = gam_tau[t, k] / (0.5 * quad + 1.0 / b_tau)
                if not (tau[k] > 0.0 and tau[k] < np.inf):
                    return 2
                quad, rss = _draw_g(ybar[k], tau[k] * sig2[k], math.sqrt(sig2[k]), q, r, rchol,
                                    qtq, z0[t, k], z1[t, k], g[k], gam, work)
                if quad != quad:
                    return 1
            else:
                quad, rss = _draw_g(ybar[k], tau[k] * sig2[k], math.sqrt(sig2[k]), q, r, rchol,
                                    qtq, z0[t, k], z1[t, k], g[k], gam, work)
                if quad != quad:
                    return 1
                tau[k] = gam_tau[t, k] / (0.5 * quad + 1.0 / b_tau)
                if not (tau[k] > 0.0 and tau[k] < np.inf):
                    return 2
                sig2[k] = (0.5 * rss + b_s) / gam_sig[t, k]
                if not (sig2[k] > 0.0 and sig2[k] < np.inf):
                    return 3
        if not reverse:
            for j in range(J):
                sig2_ind[j] = (0.5 * s_ind[j] + b_si) / gam_ind[t, j]
                if not (sig2_ind[j] > 0.0 and sig2_ind[j] < np.inf):
                    return 4
        if record:
            for k in range(G):
                out_tau[t, k] = tau[k]
                out_sig2[t, k] = sig2[k]
                for i in range(n):
                    g_sum[k, i] += g[k, i]
                    if keep_trace:
                        g_trace[t, k, i] = g[k, i]
            for j in range(J):
                out_sig2_ind[t, j] = sig2_ind[j]
    return 0


@njit(cache=True, nogil=True)
def _quad_current(g, q, r, rchol, work):
    # g'Kg = v' R^{-1} v with v = Q'g
    m = q.shape[1]
    v = work[4]
    w = work[3]
    _qt_mul(q, g, v)
    for i in range(m):
        s = v[i]
        if i >= 1:
            s -= rchol[1, i - 1] * w[i - 1]
        w[i] = s / rchol[0, i]
    quad = 0.0
    for i in range(m):
        quad += w[i] * w[i]
    return quad


@njit(cache=True, nogil=True)
def evidence_batch(ye, mu, pldet, tau, sig2, ev, rb):
    """Closed-form log-evidence and g-averaged group log-likelihood per particle.

    ``ye`` (G, n) are group means in the eigenbasis of K, ``mu`` (n) the
    eigenvalues with the null pair first and exactly zero.
    """
    P, G = tau.shape
    n = mu.shape[0]
    m = n - 2
    for p in range(P):
        for k in range(G):
            t = tau[p, k]
            s2 = sig2[p, k]
            alpha = t * s2
            sl1 = 0.0
            sl2 = 0.0
            qev = 0.0
            qrb = 0.0
            for e in range(2, n):
                a = alpha * mu[e]
                y2 = ye[k, e] * ye[k, e]
                sl1 += math.log1p(a)
                sl2 += math.log1p(0.5 * a)
                qev += y2 * mu[e] / (1.0 + a)
                qrb += y2 * a * a / ((1.0 + a) * (2.0 + a))
            ev[p, k] = -0.5 * m * LOG_2PI + 0.5 * m * math.log(t) + 0.5 * pldet - 0.5 * sl1 - 0.5 * t * qev
            rb[p, k] = (-0.5 * n * (LOG_2PI + math.log(s2) + LOG_2)
                        - 0.5 * sl2 + 0.5 * sl1 - 0.5 * qrb / s2)


@njit(cache=True, nogil=True)
def g_draw_eigen(ye, mu, tau, sig2, z, out):
    """Conditional draws of g in eigen coordinates, ``out[p, k, :]``."""
    P, G = tau.shape
    n = mu.shape[0]
    for p in range(P):
        for k in range(G):
            alpha = tau[p, k] * sig2[p, k]
            s = math.sqrt(sig2[p, k])
            for e in range(n):
                d = 1.0 + alpha * mu[e]
                out[p, k, e] = ye[k, e] / d + s * z[p, k, e] / math.sqrt(d)
