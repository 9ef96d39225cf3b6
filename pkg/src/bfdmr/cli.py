"""Command-line interface: ``bfdmr simulate | run | call | benchmark``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .bayes import format_calls, format_calls_jsonl, parse_calls, recall
from .config import MODES, RunConfig, load_config
from .data import SchemaError, format_dataset, read_dataset
from .dwpf import format_diagnostics
from .pipeline import run_pipeline, window_outcomes
from .simulate import RHOS, SimConfig, format_table1, format_truth, misclassification_table, simulate_dataset

logger = logging.getLogger("bfdmr")


class UsageError(Exception):
    pass


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rho(s: str) -> float:
    v = float(s)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"rho must lie in [0, 1), got {s}")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _rho_dir(rho: float) -> str:
    return f"rho_{rho:g}"


def _run_options(p, require_data=True):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--desk-scale", type=float, dest="desk_scale")
    p.add_argument("--out-dir", required=True, dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfdmr", description="Bayesian functional DMR detection.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic benchmark datasets")
    p.add_argument("--rho", type=_rho, nargs="+", default=[0.0])
    p.add_argument("--replicates", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out-dir", required=True, dest="out_dir")

    p = sub.add_parser("run", help="call DMRs on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--beta", required=True)
    p.add_argument("--groups", required=True)
    p.add_argument("--jsonl", action="store_true", help="also write dmr_calls.jsonl")
    _run_options(p)

    p = sub.add_parser("call", help="re-threshold an existing call file")
    p.add_argument("--calls", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")

    p = sub.add_parser("benchmark", help="misclassification table over simulated replicates")
    p.add_argument("--rho", type=_rho, nargs="+", default=list(RHOS))
    p.add_argument("--replicates", type=_positive_int, default=1)
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    _run_options(p)
    return ap


def _config_from(args) -> RunConfig:
    over = {k: getattr(args, k, None) for k in ("mode", "threshold", "seed", "threads", "desk_scale")}
    return load_config(args.config, **over)


def cmd_simulate(args) -> int:
    sim = SimConfig(replicates=args.replicates, seed=args.seed)
    out = Path(args.out_dir)
    jobs = [(rho, r) for rho in args.rho for r in range(args.replicates)]

    def one(job):
        rho, r = job
        ds, truth = simulate_dataset(sim, rho, r)
        d = out / _rho_dir(rho) / f"rep_{r + 1:03d}"
        for name, text in zip(("manifest.tsv", "beta.tsv", "groups.tsv"), format_dataset(ds)):
            atomic_write(d / name, text)
        atomic_write(d / "truth.tsv", format_truth(truth))

    with ThreadPoolExecutor(max_workers=args.threads) as ex:
        list(ex.map(one, jobs))
    conf = (f"seed = {args.seed}\nreplicates = {args.replicates}\n"
            f"rho = {' '.join(f'{r:g}' for r in args.rho)}\n")
    atomic_write(out / "simulate.conf", conf)
    return 0


def cmd_run(args) -> int:
    cfg = _config_from(args)
    for flag, path in (("--manifest", args.manifest), ("--beta", args.beta), ("--groups", args.groups)):
        if not Path(path).is_file():
            raise UsageError(f"{flag}: no such file {path}")
    ds = read_dataset(args.manifest, args.beta, args.groups)
    res = run_pipeline(ds, cfg)
    out = Path(args.out_dir)
    atomic_write(out / "dmr_calls.tsv", format_calls(res.calls))
    if args.jsonl:
        atomic_write(out / "dmr_calls.jsonl", format_calls_jsonl(res.calls))
    atomic_write(out / "run.conf", cfg.to_text())
    if cfg.mode == "dependent":
        for model in ("pooled", "grouped"):
            atomic_write(out / f"diagnostics_{model}.tsv", format_diagnostics(window_outcomes(res, model)))
    logger.info("%d windows, %d DMRs, %.1f s", len(res.calls), sum(c.is_dmr for c in res.calls), res.seconds)
    return 0


def cmd_call(args) -> int:
    path = Path(args.calls)
    if not path.is_file():
        raise UsageError(f"--calls: no such file {path}")
    calls = recall(parse_calls(path.read_text(), str(path)), args.threshold)
    atomic_write(Path(args.out_dir) / "dmr_calls.tsv", format_calls(calls))
    return 0


def cmd_benchmark(args) -> int:
    cfg = _config_from(args)
    sim = SimConfig(replicates=args.replicates, seed=cfg.seed)
    rows = []
    detail = ["method\trho\treplicate\twindow\tlog_bf\tis_dmr\n"]
    for mode in args.modes:
        mcfg = RunConfig(**{**cfg.__dict__, "mode": mode, "threads": 1}).validate()
        for rho in args.rho:
            def one(r, rho=rho, mcfg=mcfg):
                ds, truth = simulate_dataset(sim, rho, r)
                t0 = time.perf_counter()
                res = run_pipeline(ds, mcfg)
                return res, truth, time.perf_counter() - t0

            with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
                outs = list(ex.map(one, range(args.replicates)))
            calls = [[c.is_dmr for c in res.calls] for res, _, _ in outs]
            rates = misclassification_table(calls, outs[0][1])
            minutes = sum(s for _, _, s in outs) / 60.0
            rows.append((mode, rho, rates, minutes))
            for r, (res, _, _) in enumerate(outs):
                for c in res.calls:
                    detail.append(f"{mode}\t{rho:g}\t{r + 1}\t{c.window}\t{c.log_bf:.6f}\t"
                                  f"{'true' if c.is_dmr else 'false'}\n")
            logger.info("%s rho=%g: mean misclassification %.3f", mode, rho, rates.mean())
    out = Path(args.out_dir)
    atomic_write(out / "table1.tsv", format_table1(rows))
    atomic_write(out / "benchmark_calls.tsv", "".join(detail))
    return 0


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "call": cmd_call, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SchemaError, ValueError) as exc:
        print(f"bfdmr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"bfdmr {args.command}: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
