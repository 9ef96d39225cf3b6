"""Pure numpy/scipy twins of the routines in ``_kernels_numba``.

Same signatures, same pre-drawn variates, same results to rounding. The
Gibbs loop leans on LAPACK banded Cholesky; the particle kernels are
vectorised over particles.
"""

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_2 = float(np.log(2.0))


def _q_mul(q, v):
    m = q.shape[1]
    out = np.zeros(m + 2)
    out[:-2] += q[0] * v
    out[1:-1] += q[1] * v
    out[2:] += q[2] * v
    return out


def _qt_mul(q, y):
    return q[0] * y[:-2] + q[1] * y[1:-1] + q[2] * y[2:]


def _rchol_upper(rchol):
    up = np.zeros_like(rchol)
    up[1] = rchol[0]
    up[0, 1:] = rchol[1, :-1]
    return up


def _draw_g(ybar, alpha, sigma, q, r, rchol_up, qtq, z0, z1):
    u = linalg.solve_banded((0, 1), rchol_up, z1)
    rhs = ybar + sigma * (z0 + np.sqrt(alpha) * _q_mul(q, u))
    ab = np.zeros((3, q.shape[1]))
    ab[0] = r[0] + alpha * qtq[0]
    ab[1] = r[1] + alpha * qtq[1]
    ab[2] = alpha * qtq[2]
    try:
        c = linalg.cholesky_banded(ab, lower=True)
    except linalg.LinAlgError:
        return None
    gam = linalg.cho_solve_banded((c, True), _qt_mul(q, rhs))
    g = rhs - alpha * _q_mul(q, gam)
    quad = r[0] @ (gam * gam) + 2.0 * (r[1, :-1] @ (gam[:-1] * gam[1:]))
    d = ybar - g
    return g, quad, d @ d


def _quad_current(g, q, rchol):
    v = _qt_mul(q, g)
    w = linalg.solve_banded((1, 0), rchol, v)
    return w @ w


def _ok(x):
    return np.all((x > 0.0) & np.isfinite(x))


def gibbs_block(
    ybar, s_ind, grp, q, r, rchol, qtq, hyp, reverse,
    g, tau, sig2, sig2_ind,
    z0, z1, gam_tau, gam_sig, gam_ind,
    record, out_tau, out_sig2, out_sig2_ind, g_sum, g_trace,
):
    T = z0.shape[0]
    G = ybar.shape[0]
    a_tau, b_tau, a_s, b_s, a_si, b_si = hyp
    keep_trace = g_trace.shape[0] > 0
    rchol_up = _rchol_upper(rchol)
    for t in range(T):
        if reverse:
            sig2_ind[:] = (0.5 * s_ind + b_si) / gam_ind[t]
            if not _ok(sig2_ind):
                return 4
        for k in range(G):
            if reverse:
                d = ybar[k] - g[k]
                sig2[k] = (0.5 * (d @ d) + b_s) / gam_sig[t, k]
                if not _ok(sig2[k]):
                    return 3
                tau[k] = gam_tau[t, k] / (0.5 * _quad_current(g[k], q, rchol) + 1.0 / b_tau)
                if not _ok(tau[k]):
                    return 2
                res = _draw_g(ybar[k], tau[k] * sig2[k], np.sqrt(sig2[k]), q, r, rchol_up, qtq,
                              z0[t, k], z1[t, k])
                if res is None:
                    return 1
                g[k] = res[0]
            else:
                res = _draw_g(ybar[k], tau[k] * sig2[k], np.sqrt(sig2[k]), q, r, rchol_up, qtq,
                              z0[t, k], z1[t, k])
                if res is None:
                    return 1
                g[k], quad, rss = res
                tau[k] = gam_tau[t, k] / (0.5 * quad + 1.0 / b_tau)
                if not _ok(tau[k]):
                    return 2
                sig2[k] = (0.5 * rss + b_s) / gam_sig[t, k]
                if not _ok(sig2[k]):
                    return 3
        if not reverse:
            sig2_ind[:] = (0.5 * s_ind + b_si) / gam_ind[t]
            if not _ok(sig2_ind):
                return 4
        if record:
            out_tau[t] = tau
            out_sig2[t] = sig2
            out_sig2_ind[t] = sig2_ind
            g_sum += g
            if keep_trace:
                g_trace[t] = g
    return 0


def evidence_batch(ye, mu, pldet, tau, sig2, ev, rb):
    n = mu.shape[0]
    m = n - 2
    mu_r = mu[2:]
    y2 = ye[:, 2:] ** 2  # (G, m)
    alpha = tau * sig2  # (P, G)
    a = alpha[:, :, None] * mu_r  # (P, G, m)
    sl1 = np.log1p(a).sum(axis=2)
    sl2 = np.log1p(0.5 * a).sum(axis=2)
    qev = (y2 * mu_r / (1.0 + a)).sum(axis=2)
    qrb = (y2 * a * a / ((1.0 + a) * (2.0 + a))).sum(axis=2)
    ev[:] = -0.5 * m * LOG_2PI + 0.5 * m * np.log(tau) + 0.5 * pldet - 0.5 * sl1 - 0.5 * tau * qev
    rb[:] = -0.5 * n * (LOG_2PI + np.log(sig2) + LOG_2) - 0.5 * sl2 + 0.5 * sl1 - 0.5 * qrb / sig2


def g_draw_eigen(ye, mu, tau, sig2, z, out):
    d = 1.0 + (tau * sig2)[:, :, None] * mu
    out[:] = ye / d + np.sqrt(sig2)[:, :, None] * z / np.sqrt(d)
