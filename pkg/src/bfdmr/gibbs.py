"""Within-window Gibbs sampler for the hierarchical smoothing-spline model.

For group k with mean curve ``g_k``, discrepancy variance ``sigma2_k``,
smoothness ``tau_k`` (``alpha_k = tau_k * sigma2_k``) and per-individual
variances ``sigma2_jk``::

    g_k | .        ~ N[(I + a_k K)^{-1} ybar_k, (I + a_k K)^{-1} sigma2_k]
    tau_k | .      ~ Gamma(shape (n-2)/2 + A_t, rate g'Kg/2 + 1/B_t)
    sigma2_k | .   ~ InvGamma(n/2 + A_s, |ybar_k - g_k|^2 / 2 + B_s)
    sigma2_jk | .  ~ InvGamma(n/2 + A_s*, |y_jk - ybar_k|^2 / 2 + B_s*)

Priors: tau ~ Gamma(A_t, scale B_t); the variances are inverse-Gamma with
density proportional to x^{-A-1} exp(-B/x).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from . import _backend
from .spline import LOG_2PI, PenaltyMatrix, ordinal_penalty

_FAILED = {1: "g", 2: "tau", 3: "sigma2", 4: "sigma2_ind"}


@dataclass(frozen=True)
class Hyperparameters:
    a_tau: float = 1.0
    b_tau: float = 1000.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a_sigma_ind: float = 1.0
    b_sigma_ind: float = 1.0
    n_iter: int = 20000
    burn_in: int = 1000

    def __post_init__(self):
        for name in ("a_tau", "b_tau", "a_sigma", "b_sigma", "a_sigma_ind", "b_sigma_ind"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_iter < 1 or self.burn_in < 0:
            raise ValueError("n_iter must be >= 1 and burn_in >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.a_tau, self.b_tau, self.a_sigma, self.b_sigma,
                         self.a_sigma_ind, self.b_sigma_ind])


class WindowData:
    """Imputed M-values of one window with a 0-based group index per sample."""

    def __init__(self, Y, grp, n_groups: int | None = None):
        Y = np.ascontiguousarray(Y, dtype=float)
        if Y.ndim != 2:
            raise ValueError("Y must be sites x samples")
        if np.isnan(Y).any():
            raise ValueError("Y contains missing values; impute first")
        grp = np.asarray(grp, dtype=np.int64)
        if grp.shape != (Y.shape[1],):
            raise ValueError("one group index per sample required")
        G = int(grp.max()) + 1 if n_groups is None else n_groups
        counts = np.bincount(grp, minlength=G)
        if len(counts) != G or np.any(counts == 0):
            raise ValueError("every group must have at least one sample")
        self.Y = Y
        self.grp = grp
        self.G = G
        self.counts = counts
        self.ybar = np.stack([Y[:, grp == k].mean(axis=1) for k in range(G)])
        resid = Y - self.ybar[grp].T
        self.s_ind = np.einsum("ij,ij->j", resid, resid)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    def pooled(self) -> "WindowData":
        return WindowData(self.Y, np.zeros(self.J, dtype=np.int64), 1)


@dataclass(frozen=True)
class SplineState:
    g: np.ndarray  # (G, n)
    tau: np.ndarray  # (G,)
    sigma2: np.ndarray  # (G,)
    sigma2_ind: np.ndarray  # (J,)

    def __post_init__(self):
        for name in ("tau", "sigma2", "sigma2_ind"):
            v = getattr(self, name)
            if not np.all((v > 0) & np.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")

    @classmethod
    def initial(cls, data: WindowData, pm: PenaltyMatrix | None = None) -> "SplineState":
        from .spline import posterior_mean_fit

        pm = pm or ordinal_penalty(data.n)
        tau = np.ones(data.G)
        sigma2 = np.maximum(data.ybar.var(axis=1, ddof=1), 1e-8)
        resid = data.Y - data.ybar[data.grp].T
        sigma2_ind = np.maximum(resid.var(axis=0, ddof=1), 1e-8)
        g = np.stack([posterior_mean_fit(data.ybar[k], tau[k] * sigma2[k], pm) for k in range(data.G)])
        return cls(g=g, tau=tau, sigma2=sigma2, sigma2_ind=sigma2_ind)


def tau_conditional(n: int, quad: float, hyper: Hyperparameters):
    """(shape, rate) of the Gamma full conditional of tau."""
    return (n - 2) / 2.0 + hyper.a_tau, 0.5 * quad + 1.0 / hyper.b_tau


def sigma2_conditional(n: int, rss: float, hyper: Hyperparameters):
    """(shape, scale) of the inverse-Gamma full conditional of sigma2."""
    return n / 2.0 + hyper.a_sigma, 0.5 * rss + hyper.b_sigma


def sigma2_ind_conditional(n: int, ss: float, hyper: Hyperparameters):
    return n / 2.0 + hyper.a_sigma_ind, 0.5 * ss + hyper.b_sigma_ind


def _variates(rng, T, data, hyper):
    n, G, J = data.n, data.G, data.J
    return (
        rng.standard_normal((T, G, n)),
        rng.standard_normal((T, G, n - 2)),
        rng.standard_gamma((n - 2) / 2.0 + hyper.a_tau, (T, G)),
        rng.standard_gamma(n / 2.0 + hyper.a_sigma, (T, G)),
        rng.standard_gamma(n / 2.0 + hyper.a_sigma_ind, (T, J)),
    )


def _pm_arrays(pm):
    return pm.q, np.ascontiguousarray(pm.r), np.ascontiguousarray(pm.r_chol), np.ascontiguousarray(pm.qtq)


def _run_block(kern, data, pm, hyper, reverse, st, var, record, outs):
    q, r, rchol, qtq = _pm_arrays(pm)
    code = kern.gibbs_block(
        data.ybar, data.s_ind, data.grp, q, r, rchol, qtq, hyper.as_array(), reverse,
        st["g"], st["tau"], st["sigma2"], st["sigma2_ind"],
        *var, record, *outs,
    )
    if code:
        raise FloatingPointError(f"non-finite draw from the {_FAILED[code]} full conditional")


def gibbs_sweep(state: SplineState, data: WindowData, pm: PenaltyMatrix, hyper: Hyperparameters,
                rng, order: str = "forward", backend=None) -> SplineState:
    """One systematic-scan update of every parameter; returns a new state."""
    kern = backend or _backend.kernels
    st = {
        "g": np.array(state.g, dtype=float), "tau": np.array(state.tau, dtype=float),
        "sigma2": np.array(state.sigma2, dtype=float), "sigma2_ind": np.array(state.sigma2_ind, dtype=float),
    }
    var = _variates(rng, 1, data, hyper)
    outs = _empty_outs(1, data, keep_g=False)
    _run_block(kern, data, pm, hyper, order == "reverse", st, var, False, outs)
    return SplineState(**st)


def _empty_outs(T, data, keep_g):
    return (
        np.zeros((T, data.G)), np.zeros((T, data.G)), np.zeros((T, data.J)),
        np.zeros((data.G, data.n)),
        np.zeros((T if keep_g else 0, data.G, data.n)),
    )


@dataclass
class GibbsResult:
    tau: np.ndarray  # (N, G)
    sigma2: np.ndarray  # (N, G)
    sigma2_ind: np.ndarray  # (N, J)
    g_mean: np.ndarray  # (G, n)
    g: np.ndarray | None  # (N, G, n) when kept
    final: SplineState

    def __len__(self):
        return self.tau.shape[0]

    def lambdas(self) -> np.ndarray:
        """Draws of (tau_1..tau_G, sigma2_1..sigma2_G), shape (N, 2G)."""
        return np.hstack([self.tau, self.sigma2])


def run_gibbs(data: WindowData, hyper: Hyperparameters, rng, pm: PenaltyMatrix | None = None,
              init: SplineState | None = None, keep_g: bool = False, order: str = "forward",
              block: int = 1000, backend=None) -> GibbsResult:
    """Burn in for ``hyper.burn_in`` sweeps, then keep ``hyper.n_iter`` draws."""
    if order not in ("forward", "reverse"):
        raise ValueError("order must be 'forward' or 'reverse'")
    kern = backend or _backend.kernels
    pm = pm or ordinal_penalty(data.n)
    init = init or SplineState.initial(data, pm)
    st = {
        "g": np.array(init.g, dtype=float), "tau": np.array(init.tau, dtype=float),
        "sigma2": np.array(init.sigma2, dtype=float), "sigma2_ind": np.array(init.sigma2_ind, dtype=float),
    }
    reverse = order == "reverse"
    N = hyper.n_iter
    done = 0
    while done < hyper.burn_in:
        T = min(block, hyper.burn_in - done)
        _run_block(kern, data, pm, hyper, reverse, st, _variates(rng, T, data, hyper), False,
                   _empty_outs(T, data, False))
        done += T

    tau = np.empty((N, data.G))
    sig2 = np.empty((N, data.G))
    sig2_ind = np.empty((N, data.J))
    g_sum = np.zeros((data.G, data.n))
    g_all = np.empty((N, data.G, data.n)) if keep_g else None
    done = 0
    while done < N:
        T = min(block, N - done)
        sl = slice(done, done + T)
        trace = g_all[sl] if keep_g else np.zeros((0, data.G, data.n))
        _run_block(kern, data, pm, hyper, reverse, st, _variates(rng, T, data, hyper), True,
                   (tau[sl], sig2[sl], sig2_ind[sl], g_sum, trace))
        done += T
    return GibbsResult(tau=tau, sigma2=sig2, sigma2_ind=sig2_ind, g_mean=g_sum / N, g=g_all,
                       final=SplineState(**st))


def loglik(data: WindowData, state: SplineState) -> float:
    """log p(y | theta) under the two-level Gaussian factorisation.

    Sum over groups of log N(ybar_k; g_k, sigma2_k I) plus, for each sample,
    log N(y_jk; ybar_k, sigma2_jk I).
    """
    n = data.n
    d = data.ybar - state.g
    grp_term = -0.5 * (n * (LOG_2PI + np.log(state.sigma2)) + (d * d).sum(axis=1) / state.sigma2)
    ind_term = -0.5 * (n * (LOG_2PI + np.log(state.sigma2_ind)) + data.s_ind / state.sigma2_ind)
    out = float(grp_term.sum() + ind_term.sum())
    if not np.isfinite(out):
        raise FloatingPointError("log-likelihood is not finite")
    return out


def individual_expected_loglik(data: WindowData, hyper: Hyperparameters) -> float:
    """Sum over samples of log E[N(y_jk; ybar_k, sigma2_jk I)], sigma2_jk from its conditional."""
    n = data.n
    a, b = sigma2_ind_conditional(n, data.s_ind, hyper)
    s = 0.5 * data.s_ind
    terms = (-0.5 * n * LOG_2PI + a * np.log(b) - gammaln(a) + gammaln(a + 0.5 * n)
             - (a + 0.5 * n) * np.log(b + s))
    return float(terms.sum())


def mean_normalizer(data: WindowData, precision) -> float:
    """Sum over groups of (n/2) log(2 pi / sum_j precision_jk).

    Adding this to :func:`loglik` turns the product of the group-mean density
    and the per-sample densities around that mean into a proper density of
    the full data matrix: with equal precisions it is exactly the Jacobian
    from (y_1k..y_mk) to (ybar_k, deviations). Without it a model with more
    groups scores extra group-mean coordinates, so log-likelihoods of the
    pooled and grouped models would not refer to the same data.
    """
    P = np.bincount(data.grp, weights=np.asarray(precision, dtype=float), minlength=data.G)
    return float(0.5 * data.n * np.sum(LOG_2PI - np.log(P)))


def expected_mean_normalizer(data: WindowData, hyper: Hyperparameters) -> float:
    """:func:`mean_normalizer` at the conditional posterior mean of each 1 / sigma2_jk."""
    a, b = sigma2_ind_conditional(data.n, data.s_ind, hyper)
    return mean_normalizer(data, a / b)


def completed_loglik(data: WindowData, state: SplineState) -> float:
    """:func:`loglik` plus :func:`mean_normalizer`: a density of the whole window."""
    return loglik(data, state) + mean_normalizer(data, 1.0 / state.sigma2_ind)


def individual_prior_predictive(data: WindowData, hyper: Hyperparameters) -> float:
    """Sum over samples of log of the prior-integrated N(y_jk; ybar_k, sigma2_jk I)."""
    n = data.n
    a, b = hyper.a_sigma_ind, hyper.b_sigma_ind
    terms = (-0.5 * n * LOG_2PI + a * np.log(b) - gammaln(a) + gammaln(a + 0.5 * n)
             - (a + 0.5 * n) * np.log(b + 0.5 * data.s_ind))
    return float(terms.sum())


def eigen_means(data: WindowData, pm: PenaltyMatrix) -> np.ndarray:
    """Group means expressed in the eigenbasis of K, shape (G, n)."""
    return np.ascontiguousarray(data.ybar @ pm.eig[1])


def evidence(data: WindowData, pm: PenaltyMatrix, tau, sigma2, backend=None):
    """Per-draw, per-group log p(ybar_k | tau, sigma2) and log E_g[N(ybar_k; g, sigma2)].

    ``tau`` and ``sigma2`` have shape (P, G); returns two (P, G) arrays.
    """
    kern = backend or _backend.kernels
    tau = np.ascontiguousarray(tau, dtype=float)
    sigma2 = np.ascontiguousarray(sigma2, dtype=float)
    ev = np.empty_like(tau)
    rb = np.empty_like(tau)
    kern.evidence_batch(eigen_means(data, pm), pm.eig[0], pm.pseudo_log_det, tau, sigma2, ev, rb)
    return ev, rb


def expected_loglik(data: WindowData, pm: PenaltyMatrix, tau, sigma2, hyper: Hyperparameters,
                    completed: bool = True, backend=None) -> np.ndarray:
    """log E[p(y | theta) | tau, sigma2, y] for each draw of (tau, sigma2).

    ``g`` and ``sigma2_jk`` are integrated against their full conditionals in
    closed form. With ``completed`` the mean normalizer is added at the
    conditional mean of the sample precisions.
    """
    _, rb = evidence(data, pm, tau, sigma2, backend)
    out = rb.sum(axis=1) + individual_expected_loglik(data, hyper)
    if completed:
        out += expected_mean_normalizer(data, hyper)
    return out


def with_hyper(hyper: Hyperparameters, **kw) -> Hyperparameters:
    return replace(hyper, **kw)
