"""End-to-end DMR calling: windows, pooled and grouped fits, Bayes factors."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .bayes import DmrCall, call_dmrs, log_bayes_factor
from .config import RunConfig
from .data import MethylationDataset, WindowSeries, impute_missing, partition_windows
from .dwpf import (FilterConfig, WindowOutcome, WindowTarget, population_from_gibbs, run_filter,
                   window_log_marginal)
from .gibbs import WindowData, run_gibbs
from .rng import stream
from .spline import ordinal_penalty

MODELS = ("pooled", "grouped")


@dataclass
class ModelRun:
    log_marginals: np.ndarray  # per window, in series order
    seconds: np.ndarray  # per window
    diagnostics: list = field(default_factory=list)  # WindowOutcome per window (dependent mode)


@dataclass
class RunResult:
    series: WindowSeries
    calls: list[DmrCall]
    log_bf: np.ndarray
    models: dict
    seconds: float


def prepare_windows(series: WindowSeries):
    """Impute each window and build grouped and pooled model data."""
    grp = np.asarray(series.groups) - 1
    grouped, pooled = [], []
    for w in series:
        Y = impute_missing(w.Y, series.samples)
        d = WindowData(Y, grp, len(series.group_labels))
        grouped.append(d)
        pooled.append(d.pooled())
    return {"pooled": pooled, "grouped": grouped}


def _chromosome_runs(series: WindowSeries):
    runs, start = [], 0
    for i in range(1, len(series) + 1):
        if i == len(series) or series[i].chrom != series[start].chrom:
            runs.append((start, i))
            start = i
    return runs


def independent_window(data: WindowData, fcfg: FilterConfig, seed: int, key) -> tuple:
    """Gibbs run on one window and its posterior-averaged log marginal."""
    t0 = time.perf_counter()
    pm = ordinal_penalty(data.n)
    kern = _backend.kernels
    gib = run_gibbs(data, fcfg.hyper, stream(seed, *key, "gibbs"), pm, backend=kern)
    pop = population_from_gibbs(gib)
    target = WindowTarget(data, pm, fcfg.hyper, backend=kern)
    _, rb = target.evidence(pop.log_lam)
    lm = window_log_marginal(fcfg, target, pop, rb, stream(seed, *key, "loglik"))
    return lm, time.perf_counter() - t0


def _model_key(cfg: RunConfig, model: str):
    return () if cfg.share_streams else (model,)


def run_pipeline(dataset: MethylationDataset, cfg: RunConfig, series: WindowSeries | None = None) -> RunResult:
    """Fit both models on every window and call DMRs.

    Each chromosome is a separate sequence of windows. Random streams are
    keyed by (seed, model, chromosome run, window within the run, purpose),
    so results do not depend on ``cfg.threads``.
    """
    t_start = time.perf_counter()
    cfg.validate()
    if series is None:
        if cfg.max_gap > 0:
            series = partition_windows(dataset, max_gap=cfg.max_gap, min_size=cfg.min_window, c=cfg.offset)
        else:
            series = partition_windows(dataset, fixed_count=cfg.window_sites, min_size=cfg.min_window,
                                       c=cfg.offset)
    if len(series) == 0:
        return RunResult(series, [], np.empty(0), {}, time.perf_counter() - t_start)
    data = prepare_windows(series)
    fcfg = cfg.filter_config()
    runs = _chromosome_runs(series)
    T = len(series)

    tasks = []
    if cfg.mode == "independent":
        for model in MODELS:
            for ci, (a, b) in enumerate(runs):
                for t in range(a, b):
                    key = (*_model_key(cfg, model), ci, t - a)
                    tasks.append((model, [t], lambda d=data[model][t], k=key: independent_window(d, fcfg, cfg.seed, k)))
    else:
        for model in MODELS:
            for ci, (a, b) in enumerate(runs):
                key = (*_model_key(cfg, model), ci)
                tasks.append((model, list(range(a, b)),
                              lambda ws=data[model][a:b], k=key: run_filter(ws, fcfg, cfg.seed, k)))

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(lambda task: task[2](), tasks))
    else:
        results = [task[2]() for task in tasks]

    models = {m: ModelRun(np.full(T, np.nan), np.zeros(T), [None] * T) for m in MODELS}
    for (model, idx, _), res in zip(tasks, results):
        run = models[model]
        if cfg.mode == "independent":
            run.log_marginals[idx[0]], run.seconds[idx[0]] = res
        else:
            for t, o in zip(idx, res.windows):
                run.log_marginals[t] = o.log_marginal
                run.seconds[t] = o.seconds
                run.diagnostics[t] = o
    log_bf = log_bayes_factor(models["pooled"].log_marginals, models["grouped"].log_marginals)
    calls = call_dmrs(series.windows, log_bf, cfg.threshold)
    return RunResult(series, calls, np.atleast_1d(log_bf), models, time.perf_counter() - t_start)


def window_outcomes(result: RunResult, model: str) -> list[WindowOutcome]:
    return [o for o in result.models[model].diagnostics if o is not None]
