"""Experiment configuration: one flat JSON document per run.

Every key has a default; a profile ("desk" or "paper") fills in the scale
settings first, then file keys, then command-line overrides. The fully
resolved dictionary is what gets echoed next to the results, and loading
that echo reproduces the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional

from bamld.acquisition import ESTIMATORS, METHODS

EXPERIMENTS = ("rmse_fig2", "rmse_fig3", "clusters_fig4", "bo_fig5", "property_suite")
BO_SCHEMES = ("vanilla", "bamld", "full")
OUT_DIR_ENV = "BAMLD_OUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "rmse_fig2"
    profile: str = "desk"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = "results"
    workers: int = 1
    # task pool
    pool_size: int = 20
    samples_per_task: int = 40
    budget: int = 12
    methods: tuple[str, ...] = ("bamld", "uncertainty", "diversity", "uniform")
    # model
    net_hidden: tuple[int, ...] = (32, 32)
    feature_dim: int = 2
    noise_variance: float = 0.12
    particles: int = 5
    init_scheme: str = "fan_in"
    # hyper-posterior and SVGD
    prior_variance: float = 1.0
    gamma: float = 1.0
    svgd_step_size: float = 1e-3
    svgd_steps: int = 10000
    svgd_optimizer: str = "sgd"
    task_minibatch: int = 2
    warm_start: bool = True
    refit_divisor: int = 4
    # acquisition
    mc_samples: int = 512
    subset_size: Optional[int] = None
    entropy_estimator: str = "control_variate"
    # meta-test
    n_test_tasks: int = 20
    n_adapt: int = 5
    n_eval: int = 35
    # cluster sweep
    clusters: tuple[int, ...] = (1, 2, 4)
    # Bayesian optimisation
    bo_schemes: tuple[str, ...] = BO_SCHEMES
    bo_iterations: int = 20
    bo_candidate_grid: int = 200
    bo_true_max_grid: int = 10001
    ucb_beta: float = 2.0
    bo_update_steps: int = 100
    bo_noise_variance: float = 0.01
    bo_test_tasks: int = 5
    vanilla_variance: float = 1.0
    vanilla_lengthscale: float = 1.0

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


PROFILES: dict[str, dict[str, Any]] = {
    "paper": {
        "net_hidden": (32, 32),
        "particles": 5,
        "svgd_steps": 10000,
        "mc_samples": 512,
        "warm_start": False,
        "svgd_optimizer": "adam",
        "svgd_step_size": 1e-3,
    },
    "desk": {
        "net_hidden": (16, 16),
        "particles": 5,
        "svgd_steps": 1500,
        "mc_samples": 256,
        # every round refits from the initial particles with the full step count
        "warm_start": False,
        "svgd_optimizer": "adam",
        "svgd_step_size": 0.01,
        "gamma": 400.0,
        "task_minibatch": 20,
    },
}

_TUPLE_KEYS = {f.name for f in fields(ExperimentConfig) if str(f.type).startswith("tuple")}


def _require(cond: bool, name: str, message: str):
    if not cond:
        raise ConfigError(name, message)


def validate(cfg: ExperimentConfig) -> None:
    _require(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
    _require(cfg.profile in PROFILES, "profile", f"must be one of {tuple(PROFILES)}")
    _require(len(cfg.seeds) > 0, "seeds", "must be non-empty")
    _require(len(set(cfg.seeds)) == len(cfg.seeds), "seeds", "must be distinct")
    _require(all(isinstance(s, int) and s >= 0 for s in cfg.seeds), "seeds", "must be non-negative integers")
    _require(cfg.workers >= 1, "workers", "must be >= 1")
    _require(cfg.pool_size >= 1, "pool_size", "must be >= 1")
    _require(cfg.samples_per_task >= 1, "samples_per_task", "must be >= 1")
    _require(1 <= cfg.budget <= cfg.pool_size, "budget", "must satisfy 1 <= budget <= pool_size")
    _require(len(cfg.methods) > 0, "methods", "must be non-empty")
    for m in cfg.methods:
        _require(m in METHODS, "methods", f"unknown method {m!r}")
    _require(len(cfg.net_hidden) > 0 and all(h >= 1 for h in cfg.net_hidden), "net_hidden",
             "must be a non-empty list of positive widths")
    _require(cfg.feature_dim >= 1, "feature_dim", "must be >= 1")
    _require(cfg.noise_variance > 0, "noise_variance", "must be > 0")
    _require(cfg.particles >= 1, "particles", "must be >= 1")
    _require(cfg.init_scheme in ("fan_in", "prior"), "init_scheme", "must be 'fan_in' or 'prior'")
    _require(cfg.prior_variance > 0, "prior_variance", "must be > 0")
    _require(cfg.gamma > 0, "gamma", "must be > 0")
    _require(cfg.svgd_step_size > 0, "svgd_step_size", "must be > 0")
    _require(cfg.svgd_steps >= 1, "svgd_steps", "must be >= 1")
    _require(cfg.svgd_optimizer in ("sgd", "adam"), "svgd_optimizer", "must be 'sgd' or 'adam'")
    _require(cfg.task_minibatch >= 1, "task_minibatch", "must be >= 1")
    _require(cfg.refit_divisor >= 1, "refit_divisor", "must be >= 1")
    _require(cfg.mc_samples >= 2, "mc_samples", "must be >= 2")
    _require(cfg.subset_size is None or cfg.subset_size >= 1, "subset_size", "must be null or >= 1")
    _require(cfg.entropy_estimator in ESTIMATORS, "entropy_estimator", f"must be one of {ESTIMATORS}")
    _require(cfg.n_test_tasks >= 1 and cfg.n_eval >= 1 and cfg.n_adapt >= 0, "n_test_tasks",
             "meta-test sizes must be positive")
    _require(len(cfg.clusters) > 0, "clusters", "must be non-empty")
    for c in cfg.clusters:
        _require(c >= 1, "clusters", "must be positive")
        if cfg.experiment == "clusters_fig4":
            _require(cfg.pool_size % c == 0, "clusters", f"{c} does not divide pool_size")
    _require(len(cfg.bo_schemes) > 0, "bo_schemes", "must be non-empty")
    for s in cfg.bo_schemes:
        _require(s in BO_SCHEMES, "bo_schemes", f"unknown scheme {s!r}")
    _require(cfg.bo_iterations >= 1, "bo_iterations", "must be >= 1")
    _require(cfg.bo_candidate_grid >= 2, "bo_candidate_grid", "must be >= 2")
    _require(cfg.bo_true_max_grid >= 2, "bo_true_max_grid", "must be >= 2")
    _require(cfg.ucb_beta >= 0, "ucb_beta", "must be >= 0")
    _require(cfg.bo_update_steps >= 0, "bo_update_steps", "must be >= 0")
    _require(cfg.bo_noise_variance > 0, "bo_noise_variance", "must be > 0")
    _require(cfg.bo_test_tasks >= 1, "bo_test_tasks", "must be >= 1")
    _require(cfg.vanilla_variance > 0 and cfg.vanilla_lengthscale > 0, "vanilla_variance",
             "kernel parameters must be > 0")


def _coerce(raw: dict) -> dict:
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for k, v in raw.items():
        if k not in known:
            raise ConfigError(k, "unknown key")
        if k in _TUPLE_KEYS:
            if not isinstance(v, (list, tuple)):
                raise ConfigError(k, "must be a list")
            v = tuple(v)
        out[k] = v
    return out


def resolve(raw: Optional[dict] = None, profile: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Defaults, then profile, then file keys, then overrides (``None`` values ignored)."""
    raw = dict(raw or {})
    overrides = {k: v for k, v in overrides.items() if v is not None}
    prof = profile or overrides.get("profile") or raw.get("profile") or "desk"
    if prof not in PROFILES:
        raise ConfigError("profile", f"must be one of {tuple(PROFILES)}")
    if "output_dir" not in raw and "output_dir" not in overrides and os.environ.get(OUT_DIR_ENV):
        raw["output_dir"] = os.environ[OUT_DIR_ENV]
    merged = {**PROFILES[prof], **_coerce(raw), **_coerce(overrides), "profile": prof}
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc


def load_config(path: str | Path, profile: Optional[str] = None, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config", f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path}: top level must be an object")
    return resolve(raw, profile, **overrides)


def dump_resolved(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **_coerce(kw))
