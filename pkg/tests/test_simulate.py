import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfdmr.simulate import (AR1_VARIANCES, LEVELS, TRUTH, GroundTruth, SimConfig, ar1_noise,
                            daubechies10_denoise, format_table1, format_truth, group_mean,
                            misclassification_table, simulate_dataset)


def test_group_mean_examples():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(group_mean(9, 1, x), 0.75)
    np.testing.assert_allclose(group_mean(8, 1, x), 0.5)
    np.testing.assert_allclose(group_mean(8, 2, x), 0.5)
    assert group_mean(1, 1, 0.25) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert group_mean(1, 1, 0.25) == pytest.approx(0.7311, abs=1e-4)
    with pytest.raises(ValueError):
        group_mean(11, 1, x)
    with pytest.raises(ValueError):
        group_mean(1, 1, 1.5)


def test_truth_follows_mean_table():
    x = np.linspace(0, 1, 101)
    derived = tuple(not np.allclose(group_mean(t, 1, x), group_mean(t, 2, x)) for t in range(1, 11))
    assert derived == TRUTH
    assert [t + 1 for t, v in enumerate(TRUTH) if not v] == [1, 8]


@pytest.mark.parametrize("level", [2, 3, 4, 5])
def test_denoise_constant_unchanged(level):
    np.testing.assert_allclose(daubechies10_denoise(np.full(100, 0.37), level), 0.37, atol=1e-10)


@pytest.mark.parametrize("n,level", [(100, 2), (100, 5), (128, 4), (37, 3)])
def test_denoise_zero_threshold_reconstructs(n, level):
    x = np.random.default_rng(n).normal(size=n)
    np.testing.assert_allclose(daubechies10_denoise(x, level, alpha=0.0), x, atol=1e-10)


def test_denoise_contracts_noise():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.normal(size=100)
        assert daubechies10_denoise(x, 3).var() < x.var()


def test_denoise_level_too_deep():
    with pytest.raises(ValueError):
        daubechies10_denoise(np.zeros(16), 5)


def test_ar1_white_noise():
    n = 100000
    e = ar1_noise(n, 0.0, 2.0, np.random.default_rng(1))
    r1 = np.corrcoef(e[:-1], e[1:])[0, 1]
    assert abs(r1) < 3 / math.sqrt(n)


def test_ar1_correlation_and_variance():
    n = 1000000
    e = ar1_noise(n, 0.7, 0.64, np.random.default_rng(2))
    assert np.corrcoef(e[:-1], e[1:])[0, 1] == pytest.approx(0.7, abs=0.01)
    assert e.var() == pytest.approx(0.64, rel=0.02)


def test_ar1_first_value_is_stationary():
    first = np.array([ar1_noise(3, 0.9, 1.0, np.random.default_rng(s))[0] for s in range(4000)])
    assert first.var() == pytest.approx(1.0, rel=0.08)


def test_dataset_shape_and_range():
    ds, truth = simulate_dataset(SimConfig(seed=1), 0.3)
    assert ds.beta.shape == (1000, 75)
    assert np.all((ds.beta >= 0) & (ds.beta <= 1))
    assert ds.samples[0] == "ctrl001" and ds.samples[-1] == "case050"
    assert list(ds.groups).count(1) == 25
    assert truth == GroundTruth()


def test_dataset_deterministic():
    a, _ = simulate_dataset(SimConfig(seed=5), 0.5)
    b, _ = simulate_dataset(SimConfig(seed=5), 0.5)
    c, _ = simulate_dataset(SimConfig(seed=6), 0.5)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert not np.array_equal(a.beta, c.beta)


def test_truth_constant_across_rho_and_replicates():
    cfg = SimConfig(sites_per_window=40, n_control=2, n_case=2, seed=0)
    truths = {simulate_dataset(cfg, rho, r)[1] for rho in (0.0, 0.7) for r in range(2)}
    assert truths == {GroundTruth()}


def test_mean_curves_track_group_means():
    # tiny AR variances isolate the logit-noise + denoising stage
    cfg = SimConfig(ar1_variances=(1e-6,) * 10, seed=3)
    ds, _ = simulate_dataset(cfg, 0.0)
    x = np.linspace(0, 1, 100)
    for t in range(10):
        rows = slice(100 * t, 100 * (t + 1))
        for k in (1, 2):
            emp = ds.beta[rows, ds.groups == k].mean(axis=1)
            assert np.sqrt(np.mean((emp - group_mean(t + 1, k, x)) ** 2)) < 0.1


def test_window_aligned_settings():
    # sentinel variances: one tiny window among large ones
    var = [0.25] * 10
    var[6] = 1e-8
    cfg = SimConfig(ar1_variances=tuple(var), n_control=10, n_case=10, seed=2)
    ds, _ = simulate_dataset(cfg, 0.0)
    sd = [ds.beta[100 * t:100 * (t + 1)].std(axis=1).mean() for t in range(10)]
    assert int(np.argmin(sd)) == 6
    assert LEVELS == (5, 4, 3, 2, 3, 4, 5, 4, 3, 2)
    assert AR1_VARIANCES[3] == 1.0 and AR1_VARIANCES[0] == pytest.approx(0.16)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(levels=(1, 2))
    with pytest.raises(ValueError):
        SimConfig(ar1_variances=(0.0,) * 10)
    with pytest.raises(ValueError):
        simulate_dataset(SimConfig(), 1.5)


def test_misclassification_table():
    truth = GroundTruth()
    t = list(TRUTH)
    np.testing.assert_array_equal(misclassification_table([t, t], truth), np.zeros(10))
    np.testing.assert_array_equal(misclassification_table([[not v for v in t]], truth), np.ones(10))
    with pytest.raises(ValueError):
        misclassification_table([t[:9]], truth)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_rates_are_multiples_of_one_over_replicates(R, seed):
    calls = np.random.default_rng(seed).random((R, 10)) < 0.5
    rates = misclassification_table(calls, GroundTruth())
    np.testing.assert_allclose(rates * R, np.round(rates * R), atol=1e-12)


def test_report_formats():
    assert format_truth(GroundTruth()).splitlines()[:3] == ["window\tis_dmr", "1\tfalse", "2\ttrue"]
    text = format_table1([("dependent", 0.0, np.zeros(10), 1.5)])
    head, row = text.splitlines()
    assert head.split("\t") == ["method", "rho"] + [f"w{i}" for i in range(1, 11)] + ["minutes"]
    assert row.split("\t")[:3] == ["dependent", "0", "0"]
