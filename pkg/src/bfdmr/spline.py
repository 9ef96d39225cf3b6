"""Natural cubic smoothing-spline penalty and the Gaussian systems built on it.

The roughness penalty is ``g' K g`` with ``K = Q R^{-1} Q'`` (Green & Silverman):
``Q`` is the n x (n-2) second-divided-difference matrix and ``R`` the
(n-2) x (n-2) tridiagonal matrix of knot spacings. ``K`` itself is dense, so
every solve goes through the Reinsch form: for ``(I + a K) g = y``,

    (R + a Q'Q) gamma = Q'y,    g = y - a Q gamma,

where ``R + a Q'Q`` is pentadiagonal and positive definite. All determinant
and quadratic-form quantities reduce to the same banded system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))
ZERO_EIG_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """Banded factors of the penalty matrix for design points ``x``.

    ``q`` holds the three non-zero entries of every column of ``Q``; ``r``
    the diagonal and super-diagonal of ``R``.
    """

    x: np.ndarray
    q: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def m(self) -> int:
        return self.n - 2

    @cached_property
    def qtq(self) -> np.ndarray:
        """Bands (diag, first, second super-diagonal) of ``Q'Q``."""
        q0, q1, q2 = self.q
        m = self.m
        d0 = q0**2 + q1**2 + q2**2
        d1 = np.zeros(m)
        d2 = np.zeros(m)
        d1[:-1] = q1[:-1] * q0[1:] + q2[:-1] * q1[1:]
        d2[:-2] = q2[:-2] * q0[2:]
        return np.stack([d0, d1, d2])

    @cached_property
    def r_chol(self) -> np.ndarray:
        """Lower banded Cholesky factor of ``R`` (scipy layout)."""
        return linalg.cholesky_banded(self._r_lower(), lower=True)

    def _r_lower(self) -> np.ndarray:
        ab = np.zeros((2, self.m))
        ab[0] = self.r[0]
        ab[1, :-1] = self.r[1, :-1]
        return ab

    @cached_property
    def logdet_r(self) -> float:
        return float(2.0 * np.log(self.r_chol[0]).sum())

    @cached_property
    def pseudo_log_det(self) -> float:
        """Sum of logs of the n-2 positive eigenvalues of K: log det(Q'Q) - log det(R)."""
        ab = np.zeros((3, self.m))
        ab[0] = self.qtq[0]
        ab[1, :-1] = self.qtq[1, :-1]
        ab[2, :-2] = self.qtq[2, :-2]
        c = linalg.cholesky_banded(ab, lower=True)
        return float(2.0 * np.log(c[0]).sum()) - self.logdet_r

    def q_mul(self, gamma: np.ndarray) -> np.ndarray:
        """``Q @ gamma``."""
        q0, q1, q2 = self.q
        out = np.zeros(self.n)
        out[:-2] += q0 * gamma
        out[1:-1] += q1 * gamma
        out[2:] += q2 * gamma
        return out

    def qt_mul(self, y: np.ndarray) -> np.ndarray:
        """``Q' @ y``."""
        q0, q1, q2 = self.q
        return q0 * y[:-2] + q1 * y[1:-1] + q2 * y[2:]

    @cached_property
    def dense(self) -> np.ndarray:
        """K as a dense n x n array."""
        Q = np.zeros((self.n, self.m))
        j = np.arange(self.m)
        Q[j, j] = self.q[0]
        Q[j + 1, j] = self.q[1]
        Q[j + 2, j] = self.q[2]
        R = np.diag(self.r[0]) + np.diag(self.r[1, :-1], 1) + np.diag(self.r[1, :-1], -1)
        K = Q @ np.linalg.solve(R, Q.T)
        return 0.5 * (K + K.T)

    @cached_property
    def eig(self):
        """Eigenpairs of K, ascending; the two null-space eigenvalues are set to 0."""
        w, V = np.linalg.eigh(self.dense)
        w = w.copy()
        w[:2] = 0.0
        return w, V

    def reinsch_band(self, alpha: float) -> np.ndarray:
        """Lower banded storage of ``R + alpha Q'Q``."""
        ab = np.zeros((3, self.m))
        ab[0] = self.r[0] + alpha * self.qtq[0]
        ab[1, :-1] = self.r[1, :-1] + alpha * self.qtq[1, :-1]
        ab[2, :-2] = alpha * self.qtq[2, :-2]
        return ab


@lru_cache(maxsize=64)
def _penalty_cached(x_key: tuple) -> PenaltyMatrix:
    x = np.asarray(x_key, dtype=float)
    h = np.diff(x)
    q0 = 1.0 / h[:-1]
    q2 = 1.0 / h[1:]
    q1 = -q0 - q2
    r0 = (h[:-1] + h[1:]) / 3.0
    r1 = np.zeros_like(r0)
    r1[:-1] = h[1:-1] / 6.0
    x.setflags(write=False)
    return PenaltyMatrix(x=x, q=np.stack([q0, q1, q2]), r=np.stack([r0, r1]))


def penalty_matrix(x) -> PenaltyMatrix:
    """Build the natural-cubic-spline penalty for strictly increasing design points."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < 3:
        raise ValueError("need at least 3 design points")
    if not np.all(np.isfinite(x)):
        raise ValueError("design points must be finite")
    if np.any(np.diff(x) <= 0):
        raise ValueError("design points must be strictly increasing (no duplicates)")
    return _penalty_cached(tuple(x.tolist()))


def ordinal_penalty(n: int) -> PenaltyMatrix:
    """Penalty for the design points 1..n."""
    return penalty_matrix(np.arange(1.0, n + 1.0))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def reinsch(pm: PenaltyMatrix, y: np.ndarray, alpha: float):
    """Solve ``(I + alpha K) g = y``.

    Returns ``(g, gamma, logdet_b)`` where ``gamma`` solves the pentadiagonal
    Reinsch system and ``logdet_b = log det(R + alpha Q'Q)``.
    """
    c = linalg.cholesky_banded(pm.reinsch_band(alpha), lower=True)
    gamma = linalg.cho_solve_banded((c, True), pm.qt_mul(y))
    g = y - alpha * pm.q_mul(gamma)
    return g, gamma, float(2.0 * np.log(c[0]).sum())


def posterior_mean_fit(ybar, alpha: float, pm: PenaltyMatrix | None = None) -> np.ndarray:
    """Smoothing-spline fit ``(I + alpha K)^{-1} ybar`` on design points 1..n."""
    ybar = np.asarray(ybar, dtype=float)
    _check_finite(ybar, alpha)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    pm = pm or ordinal_penalty(len(ybar))
    return reinsch(pm, ybar, alpha)[0]


def sample_g(ybar, alpha: float, sigma2: float, rng, pm: PenaltyMatrix | None = None):
    """Exact draw from ``N[(I + aK)^{-1} ybar, (I + aK)^{-1} sigma2]``.

    Uses the perturbation identity: with ``b = z0 + sqrt(a) Q L_R^{-T} z1``
    (so ``Cov b = I + aK``), ``(I + aK)^{-1}(ybar + sigma b)`` has the target
    law. Every step is banded, O(n).
    """
    ybar = np.asarray(ybar, dtype=float)
    _check_finite(ybar, alpha, sigma2)
    if alpha < 0 or sigma2 < 0:
        raise ValueError("alpha and sigma2 must be >= 0")
    pm = pm or ordinal_penalty(len(ybar))
    z0 = rng.standard_normal(pm.n)
    z1 = rng.standard_normal(pm.m)
    u = linalg.solve_banded((0, 1), _upper_of_lower(pm.r_chol), z1)
    b = z0 + np.sqrt(alpha) * pm.q_mul(u)
    g = reinsch(pm, ybar + np.sqrt(sigma2) * b, alpha)[0]
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("g draw is not finite")
    return g


def _upper_of_lower(c_lower: np.ndarray) -> np.ndarray:
    # Banded storage of L' (upper, 1 super-diagonal) from L (lower, 1 sub-diagonal).
    up = np.zeros_like(c_lower)
    up[1] = c_lower[0]
    up[0, 1:] = c_lower[1, :-1]
    return up


def quad_form(g, pm: PenaltyMatrix | None = None) -> float:
    """Roughness ``g' K g``, computed as ``(Q'g)' R^{-1} (Q'g)``."""
    g = np.asarray(g, dtype=float)
    pm = pm or ordinal_penalty(len(g))
    if len(g) != pm.n:
        raise ValueError(f"g has length {len(g)}, penalty expects {pm.n}")
    v = pm.qt_mul(g)
    w = linalg.cho_solve_banded((pm.r_chol, True), v)
    return float(max(v @ w, 0.0))


def log_evidence(pm: PenaltyMatrix, ybar, tau: float, sigma2: float) -> float:
    """log p(ybar | tau, sigma2) with g integrated out.

    The prior on g is flat on the null space of K and normalised with the
    rank-(n-2) pseudo-determinant, so this is the density of the projection
    of ``ybar`` onto the range of K.
    """
    ybar = np.asarray(ybar, dtype=float)
    alpha = tau * sigma2
    _, gamma, ld_b = reinsch(pm, ybar, alpha)
    c = pm.qt_mul(ybar)
    m = pm.m
    return float(
        -0.5 * m * LOG_2PI
        + 0.5 * m * np.log(tau)
        + 0.5 * pm.pseudo_log_det
        - 0.5 * ld_b
        + 0.5 * pm.logdet_r
        - 0.5 * tau * (c @ gamma)
    )


def expected_group_loglik(pm: PenaltyMatrix, ybar, tau: float, sigma2: float) -> float:
    """E[log-density term] averaged in density: log E_g[N(ybar; g, sigma2 I)].

    The expectation is over ``g`` from its full conditional given
    ``(tau, sigma2)``, i.e. ``log N(ybar; g*, sigma2 (I + P^{-1}))`` with
    ``P = I + tau sigma2 K`` and ``g* = P^{-1} ybar``.
    """
    ybar = np.asarray(ybar, dtype=float)
    alpha = tau * sigma2
    c = pm.qt_mul(ybar)
    _, gam_a, ld_a = reinsch(pm, ybar, alpha)
    _, gam_h, ld_h = reinsch(pm, ybar, 0.5 * alpha)
    n = pm.n
    return float(
        -0.5 * n * (LOG_2PI + np.log(sigma2) + np.log(2.0))
        - 0.5 * ld_h
        + 0.5 * ld_a
        - 0.5 * tau * (c @ gam_h - c @ gam_a)
    )
