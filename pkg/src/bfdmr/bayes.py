"""Posterior Bayes factors between the pooled and grouped models, and DMR calls."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dwpf import log_weighted_mean_exp

DEFAULT_THRESHOLD = -5.0
CALL_COLUMNS = ("chrom", "window", "start", "end", "n_sites", "log_bf", "is_dmr")


def log_marginal_likelihood(loglik, weights=None, log_weights=None) -> float:
    """log of the weighted average of exp(loglik) over a particle population.

    Give either ``weights`` or ``log_weights``; unit weights when neither.
    """
    loglik = np.asarray(loglik, dtype=float)
    if log_weights is None:
        if weights is None:
            log_weights = np.zeros(loglik.shape)
        else:
            weights = np.asarray(weights, dtype=float)
            if np.any(weights < 0) or not np.any(weights > 0):
                raise ValueError("weights must be nonnegative and not all zero")
            with np.errstate(divide="ignore"):
                log_weights = np.log(weights)
    return log_weighted_mean_exp(loglik, np.asarray(log_weights, dtype=float))


def log_bayes_factor(log_m_pooled, log_m_grouped):
    """log BF of the one-curve model against the per-group model."""
    out = np.asarray(log_m_pooled, dtype=float) - np.asarray(log_m_grouped, dtype=float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DmrCall:
    chrom: str
    window: int  # 1-based, as in Window.index
    start: int
    end: int
    n_sites: int
    log_bf: float
    is_dmr: bool
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("start must not exceed end")
        if self.is_dmr != (self.log_bf < self.threshold):
            raise ValueError("is_dmr inconsistent with log_bf and threshold")


def call_dmrs(windows, log_bfs: Sequence[float], threshold: float = DEFAULT_THRESHOLD) -> list[DmrCall]:
    """One call per window; a window is a DMR when log BF < threshold (strict)."""
    if len(windows) != len(log_bfs):
        raise ValueError("one log Bayes factor per window is required")
    out = []
    for w, lb in zip(windows, log_bfs):
        lb = float(lb)
        out.append(DmrCall(w.chrom, int(w.index), int(w.start_pos), int(w.end_pos), int(w.n),
                           lb, bool(lb < threshold), threshold))
    return out


def recall(calls: Sequence[DmrCall], threshold: float) -> list[DmrCall]:
    """Re-apply a threshold to existing calls."""
    return [DmrCall(c.chrom, c.window, c.start, c.end, c.n_sites, c.log_bf,
                    bool(c.log_bf < threshold), threshold) for c in calls]


def format_calls(calls: Sequence[DmrCall]) -> str:
    lines = ["\t".join(CALL_COLUMNS)]
    for c in calls:
        lines.append(f"{c.chrom}\t{c.window}\t{c.start}\t{c.end}\t{c.n_sites}\t"
                     f"{c.log_bf:.6f}\t{'true' if c.is_dmr else 'false'}")
    return "\n".join(lines) + "\n"


def format_calls_jsonl(calls: Sequence[DmrCall]) -> str:
    return "".join(json.dumps({k: v for k, v in asdict(c).items() if k in CALL_COLUMNS}) + "\n"
                   for c in calls)


def parse_calls(text: str, source: str = "<calls>", threshold: float = DEFAULT_THRESHOLD) -> list[DmrCall]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != CALL_COLUMNS:
        raise ValueError(f"{source}:1: expected header {' '.join(CALL_COLUMNS)}")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        f = line.split("\t")
        if len(f) != len(CALL_COLUMNS):
            raise ValueError(f"{source}:{i}: expected {len(CALL_COLUMNS)} fields, got {len(f)}")
        try:
            lb = float(f[5])
            out.append(DmrCall(f[0], int(f[1]), int(f[2]), int(f[3]), int(f[4]), lb,
                               bool(lb < threshold), threshold))
        except ValueError as exc:
            raise ValueError(f"{source}:{i}: {exc}") from exc
    return out
