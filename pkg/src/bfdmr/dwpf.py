"""Dynamically weighted particle filter over consecutive windows.

Particles carry lambda = (tau_1..tau_G, sigma2_1..sigma2_G). Between windows
they follow a Gaussian random walk on log(1/tau) and log(sigma2). Within a
window a sweep of W-type moves refreshes the particles and population control
(splitting heavy particles, pruning light ones) keeps the population size
within bounds. Internally particles are stored on the log scale and weights
as log weights.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .gibbs import (GibbsResult, Hyperparameters, WindowData, eigen_means,
                    expected_mean_normalizer, individual_expected_loglik, run_gibbs,
                    sigma2_ind_conditional)
from .rng import stream
from .spline import LOG_2PI, PenaltyMatrix, ordinal_penalty

logger = logging.getLogger(__name__)


class PopulationControlError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionNoise:
    """Variances of the log-scale increments U (for 1/tau) and V (for sigma2)."""

    var_log_inv_tau: float = 0.01
    var_log_sigma2: float = 0.01

    def __post_init__(self):
        if self.var_log_inv_tau < 0 or self.var_log_sigma2 < 0:
            raise ValueError("transition variances must be nonnegative")

    def sd_vector(self, G: int) -> np.ndarray:
        return np.concatenate([np.full(G, math.sqrt(self.var_log_inv_tau)),
                               np.full(G, math.sqrt(self.var_log_sigma2))])


@dataclass(frozen=True)
class PopulationBounds:
    n_low: int = 15000
    n_up: int = 25000
    n_min: int = 10000
    n_max: int = 30000
    w_low: float = math.exp(-5.0)
    w_up: float = math.exp(5.0)
    factor: float = 2.0
    max_adapt: int = 50

    def __post_init__(self):
        if not (1 <= self.n_min <= self.n_low <= self.n_up <= self.n_max):
            raise ValueError("population bounds must satisfy 1 <= n_min <= n_low <= n_up <= n_max")
        if not (0 < self.w_low and self.w_up >= 2 * self.w_low):
            raise ValueError("weight bounds must satisfy 0 < w_low and w_up >= 2 w_low")
        if self.factor <= 1 or self.max_adapt < 1:
            raise ValueError("factor must exceed 1 and max_adapt must be >= 1")

    def scaled(self, s: float) -> "PopulationBounds":
        r = lambda v: max(1, int(round(v * s)))  # noqa: E731
        return PopulationBounds(r(self.n_low), r(self.n_up), r(self.n_min), r(self.n_max),
                                self.w_low, self.w_up, self.factor, self.max_adapt)


@dataclass(frozen=True)
class FilterConfig:
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    bounds: PopulationBounds = field(default_factory=PopulationBounds)
    noise: TransitionNoise = field(default_factory=TransitionNoise)
    theta: float = 1.0
    step: float = 0.05
    sweeps: int = 1
    loglik: str = "expected"  # or "draws"
    likelihood: str = "completed"  # or "factorized"

    def __post_init__(self):
        if not self.theta > 0 or not self.step > 0 or self.sweeps < 0:
            raise ValueError("theta and step must be positive and sweeps nonnegative")
        if self.loglik not in ("expected", "draws"):
            raise ValueError("loglik must be 'expected' or 'draws'")
        if self.likelihood not in ("completed", "factorized"):
            raise ValueError("likelihood must be 'completed' or 'factorized'")


@dataclass(frozen=True)
class Particle:
    lam: np.ndarray
    weight: float
    lineage: int = 0

    def __post_init__(self):
        if not (np.all(self.lam > 0) and self.weight > 0):
            raise ValueError("particle parameters and weight must be positive")


@dataclass
class Population:
    log_lam: np.ndarray  # (P, 2G): log tau_1..G, log sigma2_1..G
    logw: np.ndarray  # (P,)
    lineage: np.ndarray  # (P,)
    window: int = 0

    @property
    def size(self) -> int:
        return self.logw.shape[0]

    @property
    def G(self) -> int:
        return self.log_lam.shape[1] // 2

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lam)

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.log_lam[:, :self.G])

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_lam[:, self.G:])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def particles(self) -> list[Particle]:
        return [Particle(l, w, int(i)) for l, w, i in zip(self.lam, self.weights, self.lineage)]

    def take(self, idx, logw=None) -> "Population":
        return Population(self.log_lam[idx], self.logw[idx] if logw is None else logw,
                          self.lineage[idx], self.window)

    def log_total_weight(self) -> float:
        return float(logsumexp(self.logw))

    def ess(self) -> float:
        lw = self.logw - self.logw.max()
        w = np.exp(lw)
        return float(w.sum() ** 2 / (w * w).sum())

    def weighted_mean(self, values: np.ndarray) -> np.ndarray:
        w = np.exp(self.logw - self.logw.max())
        return np.tensordot(w / w.sum(), values, axes=(0, 0))


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Shift log weights so the weights average to one."""
    return logw - (logsumexp(logw) - math.log(len(logw)))


def extrapolate(lam, noise: TransitionNoise, rng) -> np.ndarray:
    """Propagate lambda = (tau..., sigma2...) one window forward.

    ``lam`` has shape (2G,) or (P, 2G).
    """
    lam = np.asarray(lam, dtype=float)
    G = lam.shape[-1] // 2
    return np.exp(_extrapolate_log(np.log(lam), noise.sd_vector(G), rng.standard_normal(lam.shape)))


def _extrapolate_log(log_lam, sd, z):
    G = log_lam.shape[-1] // 2
    out = log_lam + sd * z
    # log(1/tau_t) = log(1/tau_{t-1}) + U, so log tau moves by -U
    out[..., :G] = log_lam[..., :G] - sd[:G] * z[..., :G]
    return out


class WindowTarget:
    """Log densities of lambda on the log scale for one window.

    The target is the closed-form window evidence plus either the prior
    (first window) or the transition density from each particle's parent
    lambda. Densities are with respect to log(lambda), so proposal kernels
    that are symmetric on the log scale need no Jacobian correction.
    """

    def __init__(self, data: WindowData, pm: PenaltyMatrix, hyper: Hyperparameters,
                 noise: TransitionNoise | None = None, parent: np.ndarray | None = None,
                 backend=None):
        self.data = data
        self.pm = pm
        self.hyper = hyper
        self.noise = noise
        self.parent = parent
        self.kern = backend or _backend.kernels
        self.ye = eigen_means(data, pm)
        self.mu = np.ascontiguousarray(pm.eig[0])
        self.pldet = pm.pseudo_log_det
        self.G = data.G
        if parent is not None:
            self.sd = noise.sd_vector(self.G)

    def evidence(self, log_lam):
        G = self.G
        tau = np.ascontiguousarray(np.exp(log_lam[:, :G]))
        sig2 = np.ascontiguousarray(np.exp(log_lam[:, G:]))
        ev = np.empty_like(tau)
        rb = np.empty_like(tau)
        self.kern.evidence_batch(self.ye, self.mu, self.pldet, tau, sig2, ev, rb)
        return ev, rb

    def log_prior(self, log_lam, idx=None):
        G, h = self.G, self.hyper
        if self.parent is None:
            lt, ls = log_lam[:, :G], log_lam[:, G:]
            out = (h.a_tau * lt - np.exp(lt) / h.b_tau).sum(axis=1)
            out += (-h.a_sigma * ls - h.b_sigma * np.exp(-ls)).sum(axis=1)
            return out
        parent = self.parent if idx is None else self.parent[idx]
        d = log_lam - parent
        live = self.sd > 0
        return -0.5 * ((d[:, live] / self.sd[live]) ** 2).sum(axis=1)

    def __call__(self, log_lam, idx=None):
        ev, rb = self.evidence(log_lam)
        return ev.sum(axis=1) + self.log_prior(log_lam, idx), ev, rb


def w_move_update(logw, log_r, log_u, theta: float = 1.0):
    """Vectorised W-type decision.

    With r_d = w * r the move is accepted with probability r_d / (r_d + theta);
    the accepted weight is r_d + theta and the rejected weight w / (1 - a).
    ``log_u`` are log uniforms. Returns (accepted mask, new log weights).
    """
    log_theta = math.log(theta)
    log_rd = logw + log_r
    log_sum = np.logaddexp(log_rd, log_theta)
    accept = log_u < log_rd - log_sum
    new = np.where(accept, log_sum, logw - log_theta + log_sum)
    return accept, new


def dwis_w_move(x, weight: float, log_target: Callable, propose: Callable, theta: float, rng):
    """One W-type move of a single weighted state.

    ``propose(x, rng)`` returns ``(x_new, log_q_ratio)`` with
    ``log_q_ratio = log T(x_new, x) - log T(x, x_new)``.
    Returns ``(x_out, weight_out, accepted)``.
    """
    if not (weight > 0 and theta > 0):
        raise ValueError("weight and theta must be positive")
    y, log_q = propose(x, rng)
    log_r = log_target(y) - log_target(x) + log_q
    acc, lw = w_move_update(np.array([math.log(weight)]), np.array([log_r]),
                            np.array([math.log(rng.random())]), theta)
    return (y if acc[0] else x), float(np.exp(lw[0])), bool(acc[0])


def w_move_sweep(pop: Population, target: WindowTarget, current, step: float, theta: float,
                 free: np.ndarray, rng):
    """One W-type move per particle with a Gaussian random walk on log lambda.

    ``current`` is ``target(pop.log_lam)``; components where ``free`` is False
    are held fixed. Returns the updated population, its target values and the
    acceptance rate.
    """
    tgt, ev, rb = current
    z = rng.standard_normal(pop.log_lam.shape) * (step * free)
    log_u = np.log(rng.random(pop.size))
    prop = pop.log_lam + z
    ptgt, pev, prb = target(prop)
    acc, logw = w_move_update(pop.logw, ptgt - tgt, log_u, theta)
    sel = acc[:, None]
    new = Population(np.where(sel, prop, pop.log_lam), logw, pop.lineage, pop.window)
    return new, (np.where(acc, ptgt, tgt), np.where(sel, pev, ev), np.where(sel, prb, rb)), float(acc.mean())


@dataclass
class ControlResult:
    population: Population
    index: np.ndarray
    w_low: float  # bounds used for the accepted pass
    w_up: float
    next_w_low: float  # bounds carried to the next window
    next_w_up: float
    adaptations: int


def _split_counts(logw, lwu, cap):
    d = np.ones(len(logw), dtype=np.int64)
    split = logw > lwu
    if split.any():
        ex = np.exp(np.minimum(logw[split] - lwu, math.log(cap + 1.0)))
        d[split] = np.maximum(np.ceil(ex * (1 - 1e-12)).astype(np.int64), 1)
    return d, split


def _expected_size(logw, lwl, lwu, cap):
    d, split = _split_counts(logw, lwu, cap)
    prune = logw < lwl
    return float(d[~prune].sum() + np.exp(logw[prune] - lwl).sum())


def apepcs(pop: Population, bounds: PopulationBounds, rng, w_low: float | None = None,
           w_up: float | None = None) -> ControlResult:
    """Pruned-enriched population control with adaptive weight bounds.

    A particle heavier than ``w_up`` becomes ``ceil(w / w_up)`` equal copies;
    one lighter than ``w_low`` survives with probability ``w / w_low`` and
    weight ``w_low``. Both steps conserve the expected total weight. While the
    expected size after control lies outside ``[n_min, n_max]`` both weight
    bounds are scaled by ``bounds.factor``; the choice depends on the weights
    only, not on the random pruning outcome. A realised size outside the
    limits is redrawn. Afterwards the bounds for the next call are nudged
    towards keeping the size within ``[n_low, n_up]``.
    """
    lwl = math.log(bounds.w_low if w_low is None else w_low)
    lwu = math.log(bounds.w_up if w_up is None else w_up)
    lf = math.log(bounds.factor)
    logw = pop.logw
    if not np.all(np.isfinite(logw)):
        raise PopulationControlError("non-finite particle weight")
    inside = (logw >= lwl) & (logw <= lwu)
    if inside.all() and bounds.n_low <= pop.size <= bounds.n_up:
        idx = np.arange(pop.size)
        return ControlResult(pop, idx, math.exp(lwl), math.exp(lwu), math.exp(lwl), math.exp(lwu), 0)
    cap = bounds.n_max
    adapt = 0
    size = None
    for _ in range(2 * bounds.max_adapt + 1):
        expected = _expected_size(logw, lwl, lwu, cap)
        if not bounds.n_min <= expected <= bounds.n_max:
            if adapt == bounds.max_adapt:
                break
            shift = lf if expected > bounds.n_max else -lf
            lwl += shift
            lwu += shift
            adapt += 1
            continue
        d, split = _split_counts(logw, lwu, cap)
        prune = logw < lwl
        d[prune] = rng.random(int(prune.sum())) < np.exp(logw[prune] - lwl)
        size = int(d.sum())
        if bounds.n_min <= size <= bounds.n_max:
            break
        size = None
    if size is None:
        raise PopulationControlError(
            f"population size outside [{bounds.n_min}, {bounds.n_max}] after "
            f"{adapt} weight-bound adaptations")
    idx = np.repeat(np.arange(pop.size), d)
    new_logw = logw.copy()
    new_logw[split] = logw[split] - np.log(d[split])
    new_logw[prune] = lwl
    new = pop.take(idx, new_logw[idx])
    nl, nu = lwl, lwu
    if size > bounds.n_up:
        nl, nu = lwl + lf, lwu + lf
    elif size < bounds.n_low:
        nl, nu = lwl - lf, lwu - lf
    return ControlResult(new, idx, math.exp(lwl), math.exp(lwu), math.exp(nl), math.exp(nu), adapt)


def draw_g_eigen(pop: Population, target: WindowTarget, rng) -> np.ndarray:
    """Draws of g from its full conditional per particle, in the eigenbasis of K."""
    tau = np.ascontiguousarray(pop.tau)
    sig2 = np.ascontiguousarray(pop.sigma2)
    z = rng.standard_normal((pop.size, pop.G, target.data.n))
    out = np.empty_like(z)
    target.kern.g_draw_eigen(target.ye, target.mu, tau, sig2, z, out)
    return out


def drawn_loglik(pop: Population, target: WindowTarget, hyper: Hyperparameters, rng,
                 completed: bool = True) -> np.ndarray:
    """log p(y | theta) at one conditional draw of g and sigma2_jk per particle."""
    data = target.data
    n = data.n
    ge = draw_g_eigen(pop, target, rng)
    rss = ((target.ye[None] - ge) ** 2).sum(axis=2)
    sig2 = pop.sigma2
    grp = (-0.5 * (n * (LOG_2PI + np.log(sig2)) + rss / sig2)).sum(axis=1)
    a, b = sigma2_ind_conditional(n, data.s_ind, hyper)
    s2j = b / rng.standard_gamma(a, (pop.size, data.J))
    ind = (-0.5 * (n * (LOG_2PI + np.log(s2j)) + data.s_ind / s2j)).sum(axis=1)
    if completed:
        P = np.zeros((pop.size, data.G))
        np.add.at(P.T, data.grp, (1.0 / s2j).T)
        ind += 0.5 * n * (LOG_2PI - np.log(P)).sum(axis=1)
    return grp + ind


def fitted_curves(pop: Population, target: WindowTarget) -> np.ndarray:
    """Posterior mean of g per group, averaging conditional means over particles."""
    alpha = pop.tau * pop.sigma2
    shrink = 1.0 / (1.0 + alpha[:, :, None] * target.mu)
    ge = pop.weighted_mean(shrink) * target.ye
    return ge @ target.pm.eig[1].T


def log_weighted_mean_exp(loglik, logw) -> float:
    """log of sum_i w_i exp(l_i) / sum_i w_i."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.size == 0:
        raise ValueError("empty population")
    if not np.any(np.isfinite(loglik)):
        raise FloatingPointError("every particle log-likelihood is -inf")
    return float(logsumexp(logw + loglik) - logsumexp(logw))


@dataclass
class WindowOutcome:
    window: int
    log_marginal: float
    size: int
    ess: float
    log_total_weight: float
    w_low: float
    w_up: float
    acceptance: float
    seconds: float
    lam_mean: np.ndarray
    population: Population | None = None


@dataclass
class FilterResult:
    windows: list[WindowOutcome]

    @property
    def log_marginals(self) -> np.ndarray:
        return np.array([w.log_marginal for w in self.windows])


def window_log_marginal(config, target, pop, rb, rng) -> float:
    """Weighted-average likelihood of the window data over a population, on the log scale."""
    completed = config.likelihood == "completed"
    if config.loglik == "expected":
        ll = rb.sum(axis=1) + individual_expected_loglik(target.data, config.hyper)
        if completed:
            ll = ll + expected_mean_normalizer(target.data, config.hyper)
    else:
        ll = drawn_loglik(pop, target, config.hyper, rng, completed)
    return log_weighted_mean_exp(ll, pop.logw)


def population_from_gibbs(res: GibbsResult, window: int = 0) -> Population:
    lam = res.lambdas()
    return Population(np.log(lam), np.zeros(len(lam)), np.arange(len(lam), dtype=np.int64), window)


def run_filter(windows: Sequence[WindowData], config: FilterConfig, seed: int, key=(),
               pms: Sequence[PenaltyMatrix] | None = None, keep_populations: bool = False,
               backend=None) -> FilterResult:
    """Filter particles through ``windows`` in order.

    Window 0 is seeded with Gibbs draws at unit weight; every later window
    extrapolates, reweights by the window evidence, moves and controls.
    Random streams are keyed by ``(seed, *key, window, purpose)``. The
    first-window Gibbs chain therefore draws from ``(seed, *key, 0, "gibbs")``,
    the stream an independent-window run of the same data uses.
    """
    if len(windows) == 0:
        raise ValueError("at least one window is required")
    kern = backend or _backend.kernels
    bounds = config.bounds
    w_low, w_up = bounds.w_low, bounds.w_up
    out = []
    pop = None
    for t, data in enumerate(windows):
        t0 = time.perf_counter()
        pm = pms[t] if pms is not None else ordinal_penalty(data.n)
        if t == 0:
            gib = run_gibbs(data, config.hyper, stream(seed, *key, 0, "gibbs"), pm, backend=kern)
            pop = population_from_gibbs(gib, 0)
            target = WindowTarget(data, pm, config.hyper, backend=kern)
            free = np.ones(2 * data.G)
            cur = target(pop.log_lam)
        else:
            if data.G != pop.G:
                raise ValueError("group count changes between windows")
            rng = stream(seed, *key, t, "extrapolate")
            sd = config.noise.sd_vector(pop.G)
            parent = pop.log_lam
            lam_hat = _extrapolate_log(parent, sd, rng.standard_normal(parent.shape))
            target = WindowTarget(data, pm, config.hyper, config.noise, parent, kern)
            free = (sd > 0).astype(float)
            ev, rb = target.evidence(lam_hat)
            logw = pop.logw + ev.sum(axis=1)
            if not np.all(np.isfinite(logw)):
                bad = int(np.flatnonzero(~np.isfinite(logw))[0])
                raise FloatingPointError(f"non-finite incremental weight in window {t}, particle {bad}")
            pop = Population(lam_hat, normalize_log_weights(logw), pop.lineage, t)
            cur = (ev.sum(axis=1) + target.log_prior(lam_hat), ev, rb)
        acc = 0.0
        rng = stream(seed, *key, t, "move")
        for _ in range(config.sweeps):
            pop, cur, acc = w_move_sweep(pop, target, cur, config.step, config.theta, free, rng)
        pop.logw = normalize_log_weights(pop.logw)
        try:
            ctl = apepcs(pop, bounds, stream(seed, *key, t, "control"), w_low, w_up)
        except PopulationControlError as exc:
            raise PopulationControlError(f"window {t}: {exc}") from exc
        pop = ctl.population
        rb = cur[2][ctl.index]
        if target.parent is not None:
            target.parent = target.parent[ctl.index]
        w_low, w_up = ctl.next_w_low, ctl.next_w_up
        lm = window_log_marginal(config, target, pop, rb, stream(seed, *key, t, "loglik"))
        out.append(WindowOutcome(
            window=t, log_marginal=lm, size=pop.size, ess=pop.ess(),
            log_total_weight=pop.log_total_weight(), w_low=ctl.w_low, w_up=ctl.w_up,
            acceptance=acc, seconds=time.perf_counter() - t0, lam_mean=pop.weighted_mean(pop.lam),
            population=pop if keep_populations else None))
        logger.debug("window %d: size %d ess %.1f", t, pop.size, out[-1].ess)
    return FilterResult(out)


def format_diagnostics(outcomes: Sequence[WindowOutcome]) -> str:
    lines = ["window\tsize\tlog_total_weight\tess\twlow\twup\n"]
    for o in outcomes:
        lines.append(f"{o.window + 1}\t{o.size}\t{o.log_total_weight:.6g}\t{o.ess:.6g}\t"
                     f"{o.w_low:.6g}\t{o.w_up:.6g}\n")
    return "".join(lines)
