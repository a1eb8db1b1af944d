"""Flat ``key = value`` run configuration.

Blank lines and text after ``#`` are ignored.  Every key must be known;
a misspelled key is an error rather than a silently ignored setting.
Relative paths are resolved against the directory of the config file.

Example::

    # fit a 25 x 25 lattice
    data = data.csv
    coords_s = coords_s.csv
    coords_x = coords_x.csv
    iterations = 5000
    d = 25
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .model import PriorSpec
from .oracle import DISK_RADIUS_20PCT, SimSpec
from .sampler import McmcConfig

__all__ = ["RunConfig", "parse_config", "read_config", "format_config"]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return parse


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _ints(text):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    return tuple(int(p) for p in parts)


def _floats(text):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    out = tuple(_float(p) for p in parts)
    return out[0] if len(out) == 1 else out


def _range_rule(text):
    t = text.strip()
    return t if t == "inverse_index" else _floats(t)


def _factor_var(text):
    t = text.strip()
    return t if t == "eigen" else _float(t)


_PATHS = ("data", "coords_s", "coords_x", "truth")


@dataclass
class RunConfig:
    """All settings of one CLI invocation.

    Sampler keys carry the names of :class:`golf.sampler.McmcConfig`;
    ``prior_*`` keys set :class:`golf.model.PriorSpec`; ``sim_*`` keys set
    :class:`golf.oracle.SimSpec` for ``simulate``; ``validate_*`` keys
    control ``validate``.
    """

    # inputs
    data: str | None = None
    coords_s: str | None = None
    coords_x: str | None = None
    truth: str | None = None
    # sampler
    iterations: int = 1000
    burn_in: float = 0.2
    thin: int = 1
    d: int | None = None
    d_threshold: float = 0.99
    kron: tuple | None = None
    family_s: str = "matern52"
    family_x: str = "matern52"
    seed: int = 0
    prop_sd_beta0: float | None = None
    prop_sd_factor: float | None = None
    shared_kernel: bool = False
    init_log_beta0: float = 3.0
    init_log_beta: float = 0.0
    init_log_eta: float = 0.0
    init_noise: bool = False
    sample_kernel: bool = True
    sample_noise: bool = True
    row_sampler: str = "exact"
    level: float = 0.95
    memory_budget: int = 50_000_000
    store_factors: bool = False
    stop_after: int | None = None
    # mean model: zero, row, col or mixed; bases are "intercept", "linear" or a CSV path
    mean: str = "zero"
    row_basis: str = "intercept"
    col_basis: str = "intercept"
    # priors
    prior_c1: float | None = None
    prior_c2: float = 0.5
    prior_c3: float | None = None
    prior_decay: float | None = None
    beta0_shape: float = -0.5
    beta0_rate: float = 1.0
    # simulation
    sim_n1: int = 25
    sim_n2: int = 25
    sim_family_s: str = "matern52"
    sim_family_x: str = "matern52"
    sim_gamma_s: object = 1.0
    sim_gamma_x: object = 1.0 / 3.0
    sim_d_true: int | None = None
    sim_factor_var: object = "eigen"
    sim_noise_sd: float = 0.1
    sim_pattern: str = "random"
    sim_missing_fraction: float = 0.5
    sim_disk_radius: float = DISK_RADIUS_20PCT
    sim_kron_shape: tuple | None = None
    # validation
    validate_instances: int = 200
    validate_inject: str = "none"
    # outputs
    figures: bool = True
    metrics: bool = True
    base_dir: str = field(default=".", repr=False)

    def mcmc(self) -> McmcConfig:
        names = {f.name for f in fields(McmcConfig)}
        kw = {k: getattr(self, k) for k in names}
        try:
            return McmcConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def prior(self) -> PriorSpec:
        return PriorSpec(c1=self.prior_c1, c2=self.prior_c2, c3=self.prior_c3,
                         decay_coef=self.prior_decay, beta0_shape=self.beta0_shape,
                         beta0_rate=self.beta0_rate)

    def sim_spec(self) -> SimSpec:
        try:
            return SimSpec(n1=self.sim_n1, n2=self.sim_n2, family_s=self.sim_family_s,
                           family_x=self.sim_family_x, gamma_s=self.sim_gamma_s,
                           gamma_x=self.sim_gamma_x, d_true=self.sim_d_true,
                           factor_var=self.sim_factor_var, noise_sd=self.sim_noise_sd,
                           pattern=self.sim_pattern, missing_fraction=self.sim_missing_fraction,
                           disk_radius=self.sim_disk_radius, kron_shape=self.sim_kron_shape,
                           seed=self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def path(self, key):
        """Absolute path for a path-valued key, or None when unset."""
        v = getattr(self, key)
        if v is None:
            return None
        return v if os.path.isabs(v) else os.path.normpath(os.path.join(self.base_dir, v))


_PARSERS = {
    "iterations": int, "burn_in": _float, "thin": int, "d": _opt(int),
    "d_threshold": _float, "kron": _opt(_ints), "seed": int,
    "prop_sd_beta0": _opt(_float), "prop_sd_factor": _opt(_float),
    "shared_kernel": _bool, "init_log_beta0": _float, "init_log_beta": _float,
    "init_log_eta": _float, "init_noise": _bool, "sample_kernel": _bool,
    "sample_noise": _bool, "level": _float, "memory_budget": int,
    "store_factors": _bool, "stop_after": _opt(int),
    "prior_c1": _opt(_float), "prior_c2": _float, "prior_c3": _opt(_float),
    "prior_decay": _opt(_float), "beta0_shape": _float, "beta0_rate": _float,
    "sim_n1": int, "sim_n2": int, "sim_gamma_s": _floats, "sim_gamma_x": _range_rule,
    "sim_d_true": _opt(int), "sim_factor_var": _factor_var, "sim_noise_sd": _float,
    "sim_missing_fraction": _float, "sim_disk_radius": _float, "sim_kron_shape": _opt(_ints),
    "validate_instances": int, "figures": _bool, "metrics": _bool,
}
_CHOICES = {
    "family_s": ("exponential", "matern52", "matern_5_2", "exp", "gaussian"),
    "family_x": ("exponential", "matern52", "matern_5_2", "exp"),
    "sim_family_s": ("exponential", "matern52", "matern_5_2", "exp", "gaussian"),
    "sim_family_x": ("exponential", "matern52", "matern_5_2", "exp"),
    "row_sampler": ("exact", "additive"),
    "mean": ("zero", "row", "col", "mixed"),
    "sim_pattern": ("random", "disk", "none"),
    "validate_inject": ("none", "w_sign"),
}
KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "base_dir")


def parse_config(text: str, base_dir: str = ".", source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines into a :class:`RunConfig`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if key in _PARSERS:
                values[key] = _PARSERS[key](value)
            else:
                v = value.strip()
                if key in _CHOICES and v.lower() not in _CHOICES[key]:
                    raise ValueError(f"expected one of {', '.join(_CHOICES[key])}")
                values[key] = v.lower() if key in _CHOICES else (v or None)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(base_dir=base_dir, **values)


def read_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, os.path.dirname(os.path.abspath(path)), str(path))


def _render(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return str(v)


def format_config(cfg: RunConfig, absolute_paths=False) -> str:
    """Render every key; parsing the result gives back an equal config."""
    lines = []
    for k in KEYS:
        v = cfg.path(k) if absolute_paths and k in _PATHS else getattr(cfg, k)
        if k in _PATHS and v is None:
            v = ""
        lines.append(f"{k} = {_render(v)}")
    return "\n".join(lines) + "\n"
