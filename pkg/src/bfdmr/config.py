"""Run configuration: flat ``key = value`` files overridden by command-line flags."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .data import DEFAULT_MIN_WINDOW, DEFAULT_OFFSET
from .dwpf import FilterConfig, PopulationBounds, TransitionNoise
from .gibbs import Hyperparameters

MODES = ("independent", "dependent")


@dataclass(frozen=True)
class RunConfig:
    # priors and Gibbs budget
    a_tau: float = 1.0
    b_tau: float = 1000.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a_sigma_ind: float = 1.0
    b_sigma_ind: float = 1.0
    n_iter: int = 20000
    burn_in: int = 1000
    # particle filter
    var_log_inv_tau: float = 0.01
    var_log_sigma2: float = 0.01
    n_low: int = 15000
    n_up: int = 25000
    n_min: int = 10000
    n_max: int = 30000
    w_low: float = math.exp(-5.0)
    w_up: float = math.exp(5.0)
    bound_factor: float = 2.0
    max_adapt: int = 50
    theta: float = 1.0
    step: float = 0.05
    sweeps: int = 1
    loglik: str = "expected"
    likelihood: str = "completed"
    # calling and windows
    threshold: float = -5.0
    window_sites: int = 100
    max_gap: float = 0.0  # > 0 switches to gap-based windows
    min_window: int = DEFAULT_MIN_WINDOW
    offset: float = DEFAULT_OFFSET
    # execution
    mode: str = "dependent"
    seed: int = 0
    threads: int = 1
    desk_scale: float = 1.0
    share_streams: bool = True

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.desk_scale <= 1:
            raise ValueError("desk_scale must lie in (0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0 < self.offset:
            raise ValueError("offset must be positive")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if self.max_gap < 0:
            raise ValueError("max_gap must be nonnegative")
        if self.max_gap == 0 and self.window_sites < self.min_window:
            raise ValueError("window_sites must be at least min_window")
        if self.min_window < 3:
            raise ValueError("min_window must be at least 3")
        self.filter_config()
        return self

    def scaled_n_iter(self) -> int:
        return max(1, int(round(self.n_iter * self.desk_scale)))

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(self.a_tau, self.b_tau, self.a_sigma, self.b_sigma, self.a_sigma_ind,
                               self.b_sigma_ind, self.scaled_n_iter(), self.burn_in)

    def filter_config(self) -> FilterConfig:
        bounds = PopulationBounds(self.n_low, self.n_up, self.n_min, self.n_max, self.w_low,
                                  self.w_up, self.bound_factor, self.max_adapt)
        if self.desk_scale != 1:
            bounds = bounds.scaled(self.desk_scale)
        return FilterConfig(
            hyper=self.hyperparameters(),
            bounds=bounds,
            noise=TransitionNoise(self.var_log_inv_tau, self.var_log_sigma2),
            theta=self.theta, step=self.step, sweeps=self.sweeps, loglik=self.loglik,
            likelihood=self.likelihood,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"bad value {raw!r} for {name}") from None


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{ln}: expected key = value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"{source}:{ln}: unknown key {key!r}")
        try:
            out[key] = _parse(key, val, _TYPES[key])
        except ValueError as exc:
            raise ValueError(f"{source}:{ln}: {exc}") from None
    return out


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg = replace(cfg, **parse_config_text(fh.read(), str(path)))
    unknown = set(overrides) - set(_TYPES)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
