"""Synthetic two-group methylation benchmark with ten dependent windows.

Each subject's curve in window t starts from the logit of its group mean
function, gets N(0, 0.2^2) site noise, is wavelet denoised (Daubechies 10,
window-specific level), mapped back to the rate scale and finally receives
AR(1) errors with a window-specific marginal variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pywt
from scipy.signal import lfilter
from scipy.special import expit, logit

from .data import MethylationDataset
from .rng import stream

LEVELS = (5, 4, 3, 2, 3, 4, 5, 4, 3, 2)
AR1_VARIANCES = (0.4**2, 0.6**2, 0.8**2, 1.0, 0.8**2, 0.6**2, 0.4**2, 0.6**2, 0.8**2, 1.0)
TRUTH = (False, True, True, True, True, True, True, False, True, True)
RHOS = (0.0, 0.3, 0.5, 0.7)


def _lg(z):
    return 1.0 / (1.0 + np.exp(z))


# g_{t,k}(x) for t = 1..10 and k = 1 (control), 2 (case)
_MEANS = {
    (1, 1): lambda x: _lg(-np.sin(2 * np.pi * x)),
    (1, 2): lambda x: _lg(-np.sin(2 * np.pi * x)),
    (2, 1): lambda x: _lg(-np.sin(np.pi * x)),
    (2, 2): lambda x: _lg(-np.sin(2 * np.pi * x)),
    (3, 1): lambda x: _lg(-np.sin(np.pi + np.pi * x)),
    (3, 2): lambda x: _lg(np.sin(np.pi + np.pi * x) + 1),
    (4, 1): lambda x: _lg(-np.sin(np.pi * x / 2)),
    (4, 2): lambda x: _lg(np.sin(np.pi * x / 2) - 1),
    (5, 1): lambda x: _lg(-np.sin((np.pi + np.pi * x) / 2)),
    (5, 2): lambda x: _lg((np.sin(np.pi / 2 + 2 * np.pi * x) - 1) / 2),
    (6, 1): lambda x: _lg(-np.sin(np.pi + np.pi * x / 2)),
    (6, 2): lambda x: _lg(-np.sin(np.pi + np.pi * x)),
    (7, 1): lambda x: _lg(-np.sin((3 * np.pi + np.pi * x) / 2)),
    (7, 2): lambda x: _lg(np.sin((3 * np.pi + np.pi * x) / 2) + 1),
    (8, 1): lambda x: np.full_like(x, 0.5),
    (8, 2): lambda x: np.full_like(x, 0.5),
    (9, 1): lambda x: np.full_like(x, 0.75),
    (9, 2): lambda x: np.full_like(x, 0.25),
    (10, 1): lambda x: np.full_like(x, 0.25),
    (10, 2): lambda x: np.full_like(x, 0.4),
}


def group_mean(t: int, k: int, x) -> np.ndarray:
    """Mean methylation rate of group ``k`` (1 control, 2 case) in window ``t`` (1..10)."""
    if (t, k) not in _MEANS:
        raise ValueError(f"no mean function for window {t}, group {k}")
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("x must lie in [0, 1]")
    return _MEANS[(t, k)](x)


@dataclass(frozen=True)
class SimConfig:
    n_control: int = 25
    n_case: int = 50
    sites_per_window: int = 100
    windows: int = 10
    logit_noise_sd: float = 0.2
    levels: tuple = LEVELS
    ar1_variances: tuple = AR1_VARIANCES
    wavelet: str = "db10"
    threshold_scale: float = 3.0
    continuous_ar1: bool = True
    spacing: int = 100
    chrom: str = "chr1"
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if len(self.levels) != self.windows or len(self.ar1_variances) != self.windows:
            raise ValueError("levels and ar1_variances need one entry per window")
        if any(v <= 0 for v in self.ar1_variances):
            raise ValueError("AR(1) variances must be positive")
        if self.n_control < 1 or self.n_case < 1 or self.sites_per_window < 3:
            raise ValueError("need at least one subject per group and three sites per window")
        if self.windows > 10:
            raise ValueError("mean functions are defined for at most 10 windows")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    is_dmr: tuple = TRUTH

    def __post_init__(self):
        if not all(isinstance(v, bool) for v in self.is_dmr):
            raise ValueError("truth entries must be booleans")


def daubechies10_denoise(signal, level: int, alpha: float = 3.0, wavelet: str = "db10") -> np.ndarray:
    """Soft-threshold wavelet denoising.

    The signal is padded by symmetric reflection to a multiple of 2**level,
    decomposed with a periodised DWT, every detail coefficient is soft
    thresholded at ``alpha * sigma * sqrt(2 log L)`` (``sigma`` from the MAD of
    the finest details, ``L`` the padded length), reconstructed and cropped.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if level < 1 or 2**level > len(x):
        raise ValueError(f"level {level} is too deep for a signal of length {len(x)}")
    block = 2**level
    L = -(-len(x) // block) * block
    pad = L - len(x)
    left = pad // 2
    xp = np.pad(x, (left, pad - left), mode="symmetric")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(xp, wavelet, mode="periodization", level=level)
        sigma = np.median(np.abs(coeffs[-1])) / 0.6745
        thr = alpha * sigma * math.sqrt(2.0 * math.log(L))
        coeffs[1:] = [pywt.threshold(c, thr, mode="soft") for c in coeffs[1:]]
        out = pywt.waverec(coeffs, wavelet, mode="periodization")
    return out[left:left + len(x)]


def ar1_noise(n: int, rho: float, marginal_variance: float, rng) -> np.ndarray:
    """Stationary AR(1) series with the given lag-one correlation and marginal variance."""
    return math.sqrt(marginal_variance) * _ar1_unit(rng.standard_normal(n), rho)


def _ar1_unit(z, rho):
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    eta = z * math.sqrt(1.0 - rho * rho)
    eta[0] = z[0]
    return lfilter([1.0], [1.0, -rho], eta)


def _subject(config: SimConfig, k: int, rho: float, rng) -> np.ndarray:
    n = config.sites_per_window
    T = config.windows
    x = np.linspace(0.0, 1.0, n)
    base = rng.standard_normal((T, n))
    zar = rng.standard_normal(T * n)
    if config.continuous_ar1:
        unit = _ar1_unit(zar, rho).reshape(T, n)
    else:
        unit = np.stack([_ar1_unit(z, rho) for z in zar.reshape(T, n)])
    out = np.empty(T * n)
    for t in range(T):
        z = logit(group_mean(t + 1, k, x)) + config.logit_noise_sd * base[t]
        smooth = daubechies10_denoise(z, config.levels[t], config.threshold_scale, config.wavelet)
        out[t * n:(t + 1) * n] = expit(smooth) + math.sqrt(config.ar1_variances[t]) * unit[t]
    return np.clip(out, 0.0, 1.0)


def simulate_dataset(config: SimConfig, rho: float, replicate: int = 0):
    """Return ``(MethylationDataset, GroundTruth)`` for one replicate.

    Subject ``j`` of replicate ``r`` draws from the stream
    ``(config.seed, "sim", r, j)``, the same for every ``rho``.
    """
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    J = config.n_control + config.n_case
    groups = np.array([1] * config.n_control + [2] * config.n_case)
    beta = np.empty((config.windows * config.sites_per_window, J))
    for j in range(J):
        beta[:, j] = _subject(config, int(groups[j]), rho, stream(config.seed, "sim", replicate, j))
    n_sites = beta.shape[0]
    samples = tuple([f"ctrl{j + 1:03d}" for j in range(config.n_control)]
                    + [f"case{j + 1:03d}" for j in range(config.n_case)])
    ds = MethylationDataset(
        chrom=np.array([config.chrom] * n_sites, dtype=object),
        pos=np.arange(1, n_sites + 1, dtype=np.int64) * config.spacing,
        cpg_id=np.array([f"cg{i + 1:06d}" for i in range(n_sites)], dtype=object),
        beta=beta,
        samples=samples,
        groups=groups,
        group_labels=("control", "case"),
    )
    return ds, GroundTruth(TRUTH[:config.windows])


def misclassification_table(calls: Sequence[Sequence[bool]], truth: GroundTruth) -> np.ndarray:
    """Per-window fraction of replicates whose call disagrees with the truth."""
    c = np.asarray(calls, dtype=bool)
    if c.ndim != 2 or c.shape[1] != len(truth.is_dmr):
        raise ValueError("need one call per window for every replicate")
    return (c != np.asarray(truth.is_dmr)).mean(axis=0)


def format_truth(truth: GroundTruth) -> str:
    return "window\tis_dmr\n" + "".join(f"{t + 1}\t{'true' if v else 'false'}\n"
                                        for t, v in enumerate(truth.is_dmr))


def format_table1(rows) -> str:
    """``rows`` are ``(method, rho, rates, minutes)`` tuples."""
    n = max((len(r[2]) for r in rows), default=10)
    lines = ["method\trho\t" + "\t".join(f"w{i + 1}" for i in range(n)) + "\tminutes"]
    for method, rho, rates, minutes in rows:
        lines.append(f"{method}\t{rho:g}\t" + "\t".join(f"{r:.6g}" for r in rates) + f"\t{minutes:.4f}")
    return "\n".join(lines) + "\n"
