import math

import numpy as np
import pytest
from scipy import integrate, stats

from bfdmr.gibbs import (Hyperparameters, SplineState, WindowData, completed_loglik, evidence,
                         expected_loglik, gibbs_sweep, individual_expected_loglik, loglik,
                         mean_normalizer, run_gibbs, sigma2_conditional, tau_conditional)
from bfdmr.spline import expected_group_loglik, log_evidence, ordinal_penalty, quad_form

from conftest import ORACLE_Y, sigma2_posterior_grid


def test_conditional_examples():
    assert tau_conditional(4, 2.0, Hyperparameters()) == pytest.approx((2.0, 1.001))
    assert sigma2_conditional(2, 0.0, Hyperparameters()) == pytest.approx((2.0, 1.0))


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        Hyperparameters(a_tau=0.0)
    with pytest.raises(ValueError):
        Hyperparameters(n_iter=0)


def _window(n=5, J=4, G=1, seed=0):
    r = np.random.default_rng(seed)
    Y = np.sin(np.linspace(0, 3, n))[:, None] + 0.3 * r.normal(size=(n, J))
    return WindowData(Y, np.arange(J) % G, G)


def test_tau_draws_given_fixed_g():
    # Reverse order draws tau before g, so the tau draw conditions on the input g.
    data = _window(n=5)
    pm = ordinal_penalty(5)
    hyper = Hyperparameters()
    g = np.array([[0.0, 0.4, 0.1, 0.7, 0.2]])
    state = SplineState(g, np.ones(1), np.ones(1), np.ones(data.J))
    rng = np.random.default_rng(4)
    taus = np.array([gibbs_sweep(state, data, pm, hyper, rng, order="reverse").tau[0] for _ in range(20000)])
    shape, rate = tau_conditional(5, quad_form(g[0], pm), hyper)
    mean, var = shape / rate, shape / rate**2
    se_mean = math.sqrt(var / len(taus))
    assert abs(taus.mean() - mean) < 3 * se_mean
    # Var of the sample variance for a Gamma: (kurtosis excess 6/shape + 2) var^2 / N
    se_var = math.sqrt((6 / shape + 2) * var**2 / len(taus))
    assert abs(taus.var() - var) < 3 * se_var


def test_sigma2_draws_given_fixed_g():
    data = _window(n=6, seed=2)
    pm = ordinal_penalty(6)
    hyper = Hyperparameters(a_sigma=5.0, b_sigma=2.0)
    g = data.ybar + 0.1
    state = SplineState(g, np.ones(1), np.ones(1), np.ones(data.J))
    rng = np.random.default_rng(8)
    s = np.array([gibbs_sweep(state, data, pm, hyper, rng, order="reverse").sigma2[0] for _ in range(20000)])
    a, b = sigma2_conditional(6, float(np.sum((data.ybar - g) ** 2)), hyper)
    mean = b / (a - 1)
    sd = math.sqrt(b * b / ((a - 1) ** 2 * (a - 2)))
    assert abs(s.mean() - mean) < 3 * sd / math.sqrt(len(s))


def test_loglik_examples():
    data = WindowData(np.zeros((1, 1)), [0])
    st = SplineState(np.zeros((1, 1)), np.ones(1), np.ones(1), np.ones(1))
    assert loglik(data, st) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    data = WindowData(np.full((3, 2), 0.4), [0, 0])
    st2 = SplineState(np.full((1, 3), 0.4), np.ones(1), np.ones(1), np.full(2, 2.0))
    st1 = SplineState(np.full((1, 3), 0.4), np.ones(1), np.ones(1), np.ones(2))
    assert loglik(data, st2) < loglik(data, st1)


def test_loglik_sample_order_invariant():
    data = _window(n=6, J=5, G=2, seed=3)
    st = SplineState(data.ybar * 0.9, np.ones(2), np.array([0.5, 2.0]), np.linspace(0.5, 1.5, 5))
    perm = np.array([4, 2, 0, 3, 1])
    data_p = WindowData(data.Y[:, perm], data.grp[perm], 2)
    st_p = SplineState(st.g, st.tau, st.sigma2, st.sigma2_ind[perm])
    assert loglik(data_p, st_p) == pytest.approx(loglik(data, st), abs=1e-10)
    assert completed_loglik(data_p, st_p) == pytest.approx(completed_loglik(data, st), abs=1e-10)


def test_completed_loglik_is_a_density():
    # n = 1, two samples in one group, equal precisions: integrates to one over (y1, y2).
    g, s2, s2i = 0.3, 0.7, 0.4

    def dens(y2, y1):
        data = WindowData(np.array([[y1, y2]]), [0, 0])
        st = SplineState(np.array([[g]]), np.ones(1), np.array([s2]), np.full(2, s2i))
        return math.exp(completed_loglik(data, st))

    val, _ = integrate.dblquad(dens, -8, 8, -8, 8, epsabs=1e-9)
    assert val == pytest.approx(1.0, abs=1e-5)


def test_mean_normalizer_pooling():
    data = _window(n=4, J=4, G=2)
    prec = np.full(4, 2.0)
    # pooled: one mean coordinate per site, grouped: two
    assert mean_normalizer(data.pooled(), prec) == pytest.approx(2.0 * math.log(2 * math.pi / 8.0))
    assert mean_normalizer(data, prec) == pytest.approx(4.0 * math.log(2 * math.pi / 4.0))


def test_run_gibbs_bookkeeping():
    data = _window()
    res = run_gibbs(data, Hyperparameters(n_iter=100, burn_in=10), np.random.default_rng(0), keep_g=True)
    assert len(res) == 100
    assert res.g.shape == (100, 1, 5)
    assert res.lambdas().shape == (100, 2)
    assert np.all(res.tau > 0) and np.all(res.sigma2 > 0) and np.all(res.sigma2_ind > 0)


def test_run_gibbs_reproducible():
    data = _window(G=2)
    h = Hyperparameters(n_iter=500, burn_in=50)
    a = run_gibbs(data, h, np.random.default_rng(5))
    b = run_gibbs(data, h, np.random.default_rng(5))
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.g_mean, b.g_mean)
    c = run_gibbs(data, h, np.random.default_rng(6))
    assert not np.array_equal(a.tau, c.tau)


def test_constant_data():
    data = WindowData(np.full((8, 3), 1.7), [0, 0, 0])
    res = run_gibbs(data, Hyperparameters(n_iter=2000, burn_in=200), np.random.default_rng(1))
    assert np.all(np.abs(res.g_mean - 1.7) < 0.05)


def test_identical_groups_agree():
    r = np.random.default_rng(2)
    block = np.cos(np.linspace(0, 2, 10))[:, None] + 0.2 * r.normal(size=(10, 3))
    data = WindowData(np.hstack([block, block]), [0, 0, 0, 1, 1, 1])
    res = run_gibbs(data, Hyperparameters(n_iter=20000, burn_in=500), np.random.default_rng(3), keep_g=True)
    diff = res.g[:, 0, :] - res.g[:, 1, :]
    # batch-means standard error of the mean difference
    batches = diff.reshape(40, -1, 10).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / math.sqrt(40)
    assert np.all(np.abs(diff.mean(axis=0)) < 4 * se + 1e-12)


def test_update_order_leaves_means_unchanged():
    data = _window(n=8, J=4, seed=7)
    h = Hyperparameters(n_iter=40000, burn_in=1000, a_sigma=3.0, b_sigma=1.0)
    out = []
    for order, seed in (("forward", 1), ("reverse", 2)):
        res = run_gibbs(data, h, np.random.default_rng(seed), order=order)
        out.append(np.log(res.sigma2[:, 0]))
    se = [x.reshape(50, -1).mean(1).std(ddof=1) / math.sqrt(50) for x in out]
    assert abs(out[0].mean() - out[1].mean()) < 4 * math.hypot(*se)


def test_small_alpha_tracks_ybar():
    data = _window(n=10, J=3, seed=9)
    # tau prior pinned near zero; an informative sigma2 prior keeps the chain proper
    h = Hyperparameters(b_tau=1e-8, a_sigma=20.0, b_sigma=0.2, n_iter=20000, burn_in=200)
    res = run_gibbs(data, h, np.random.default_rng(0), keep_g=True)
    g = res.g[:, 0, :]
    se = g.reshape(40, -1, 10).mean(axis=1).std(axis=0, ddof=1) / math.sqrt(40)
    assert np.all(np.abs(res.g_mean[0] - data.ybar[0]) < 4 * se)


def test_sigma2_posterior_mean_default_priors():
    data = WindowData(ORACLE_Y, [0, 0])
    h = Hyperparameters(n_iter=200000, burn_in=1000)
    m_ref, _ = sigma2_posterior_grid(data.ybar[0], h)
    res = run_gibbs(data, h, np.random.default_rng(0))
    assert res.sigma2[:, 0].mean() == pytest.approx(m_ref, rel=0.05)


def test_individual_expected_loglik_quadrature():
    data = WindowData(np.array([[0.1, 0.5], [0.3, 0.2], [0.6, 0.9]]), [0, 0])
    h = Hyperparameters(a_sigma_ind=2.0, b_sigma_ind=0.5)
    a, b = h.a_sigma_ind + 1.5, 0.5 * data.s_ind + 0.5
    ref = 0.0
    for j in range(2):
        f = lambda v, j=j: (stats.invgamma(a, scale=b[j]).pdf(v)
                            * (2 * math.pi * v) ** -1.5 * math.exp(-0.5 * data.s_ind[j] / v))
        val, _ = integrate.quad(f, 0, np.inf, limit=200)
        ref += math.log(val)
    assert individual_expected_loglik(data, h) == pytest.approx(ref, abs=1e-7)


def test_evidence_batch_matches_closed_forms():
    data = _window(n=9, J=4, G=2, seed=11)
    pm = ordinal_penalty(9)
    tau = np.array([[0.5, 2.0], [10.0, 0.01]])
    s2 = np.array([[0.2, 1.0], [0.05, 3.0]])
    ev, rb = evidence(data, pm, tau, s2)
    for p in range(2):
        for k in range(2):
            assert ev[p, k] == pytest.approx(log_evidence(pm, data.ybar[k], tau[p, k], s2[p, k]), abs=1e-9)
            assert rb[p, k] == pytest.approx(expected_group_loglik(pm, data.ybar[k], tau[p, k], s2[p, k]),
                                             abs=1e-9)
    h = Hyperparameters()
    el = expected_loglik(data, pm, tau, s2, h, completed=False)
    np.testing.assert_allclose(el, rb.sum(1) + individual_expected_loglik(data, h))
