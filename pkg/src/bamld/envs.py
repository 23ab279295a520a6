"""Synthetic task families and the labeling oracle.

Normal distributions are parameterised by (mean, variance) throughout.
Labels for every pool task are drawn once when the pool is created and kept
hidden until :meth:`TaskPool.label` reveals them, so two acquisition schemes
run on the same pool see identical label realisations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Union

import numpy as np

from bamld.gp import TaskDataset

POOL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, math.sqrt(self.var), size)


Dist = Union[Uniform, Normal]


def dist_from_dict(d: dict) -> Dist:
    kind = d.get("kind")
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "normal":
        return Normal(float(d["mean"]), float(d["var"]))
    raise ValueError(f"unknown distribution descriptor {d!r}")


def dist_to_dict(dist: Dist) -> dict:
    kind = "uniform" if isinstance(dist, Uniform) else "normal"
    return {"kind": kind, **asdict(dist)}


# --- sinusoid family ---------------------------------------------------------

@dataclass(frozen=True)
class SinusoidTaskParams:
    a: float
    b: float
    c: float
    alpha: float


def eval_sinusoid(p: SinusoidTaskParams, x):
    x = np.asarray(x, dtype=np.float64)
    return p.alpha * x + p.a * np.sin(1.5 * (x - p.b)) + p.c


@dataclass(frozen=True)
class SinusoidEnvConfig:
    a_dist: Dist = Uniform(0.9, 1.1)
    b_dist: Dist = Normal(0.0, 0.06)
    c_dist: Dist = Normal(5.0, 0.06)
    alpha_dist: Dist = Normal(0.5, 0.11)
    x_range: tuple[float, float] = (-5.0, 5.0)
    noise_var: float = 0.12
    n_samples: int = 40

    def __post_init__(self):
        if self.n_samples < 1 or self.noise_var < 0:
            raise ValueError("invalid sinusoid environment")


FIG2_ENV = SinusoidEnvConfig()
FIG3_ENV = SinusoidEnvConfig(Uniform(0.7, 1.3), Normal(0.0, 0.12), Normal(5.0, 0.12), Normal(0.5, 0.22))


# --- BO objective family -----------------------------------------------------

@dataclass(frozen=True)
class BoTaskParams:
    w1: float
    w2: float
    w3: float
    alpha1: float
    alpha2: float
    alpha3: float


def _p1(x, a):
    return 1.0 / (np.pi * (1.0 + (x - a) ** 2))


def _p2(x, a):
    return np.exp(-((x - a) ** 2) / 8.0) / (2.0 * np.pi)


def _p3(x, a):
    return 1.0 / (np.pi * (1.0 + (x - a) ** 2 / 4.0))


def eval_g_bo(p: BoTaskParams, x):
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * p.w1 * _p1(x, p.alpha1) + 1.5 * p.w2 * _p2(x, p.alpha2) + 1.8 * p.w3 * _p3(x, p.alpha3) + 1.0


def g_bo_upper_bound(p: BoTaskParams) -> float:
    return 1.0 + 2.0 * p.w1 / np.pi + 1.5 * p.w2 / (2 * np.pi) + 1.8 * p.w3 / np.pi


@dataclass(frozen=True)
class BoEnvConfig:
    w_dist: Dist = Uniform(0.6, 1.4)
    alpha1_dist: Dist = Normal(-2.0, 0.09)
    alpha2_dist: Dist = Normal(3.0, 0.09)
    alpha3_dist: Dist = Normal(-8.0, 0.09)
    x_range: tuple[float, float] = (-10.0, 10.0)
    noise_var: float = 0.01
    n_samples: int = 40


# --- pools and the oracle ----------------------------------------------------

TaskParams = Union[SinusoidTaskParams, BoTaskParams]


def task_function(p: TaskParams) -> Callable:
    if isinstance(p, SinusoidTaskParams):
        return lambda x: eval_sinusoid(p, x)
    return lambda x: eval_g_bo(p, x)


class OracleError(RuntimeError):
    """Invalid labeling request (unknown task or already labeled)."""


@dataclass
class TaskPool:
    """Unlabeled tasks with hidden, pre-drawn labels."""

    params: list
    xs: list[np.ndarray]
    hidden_y: list[np.ndarray]
    labeled: list[bool] = field(default_factory=list)
    clusters: list[int] | None = None

    def __post_init__(self):
        if not self.labeled:
            self.labeled = [False] * len(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def task_ids(self) -> list[int]:
        return list(range(len(self)))

    @property
    def labeled_ids(self) -> list[int]:
        return [i for i, f in enumerate(self.labeled) if f]

    @property
    def unlabeled_ids(self) -> list[int]:
        return [i for i, f in enumerate(self.labeled) if not f]

    def _check(self, task_id: int):
        if not 0 <= task_id < len(self):
            raise OracleError(f"unknown task id {task_id}")

    def task(self, task_id: int) -> TaskDataset:
        """The task as the learner sees it: labels only once revealed."""
        self._check(task_id)
        y = self.hidden_y[task_id] if self.labeled[task_id] else None
        return TaskDataset(self.xs[task_id], y, task_id)

    def label(self, task_id: int) -> np.ndarray:
        self._check(task_id)
        if self.labeled[task_id]:
            raise OracleError(f"task {task_id} is already labeled")
        self.labeled[task_id] = True
        return self.hidden_y[task_id].copy()

    def mean_function(self, task_id: int) -> np.ndarray:
        self._check(task_id)
        return task_function(self.params[task_id])(self.xs[task_id][:, 0])

    def reveal_all(self) -> list[TaskDataset]:
        """Every task with labels, bypassing the oracle bookkeeping (meta-test sets, audits)."""
        return [TaskDataset(x, y, i) for i, (x, y) in enumerate(zip(self.xs, self.hidden_y))]

    def to_dict(self) -> dict:
        kinds = {SinusoidTaskParams: "sinusoid", BoTaskParams: "bo"}
        return {
            "version": POOL_FORMAT_VERSION,
            "params": [{"kind": kinds[type(p)], **asdict(p)} for p in self.params],
            "xs": [x[:, 0].tolist() for x in self.xs],
            "hidden_y": [y.tolist() for y in self.hidden_y],
            "labeled": list(self.labeled),
            "clusters": self.clusters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskPool":
        if d.get("version") != POOL_FORMAT_VERSION:
            raise ValueError(f"unsupported pool format version {d.get('version')!r}")
        params = []
        for p in d["params"]:
            p = dict(p)
            kind = p.pop("kind")
            params.append(SinusoidTaskParams(**p) if kind == "sinusoid" else BoTaskParams(**p))
        return cls(params, [np.array(x, dtype=np.float64)[:, None] for x in d["xs"]],
                   [np.array(y, dtype=np.float64) for y in d["hidden_y"]],
                   list(d["labeled"]), d.get("clusters"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TaskPool":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _draw_tasks(params: list, x_range, n_samples: int, noise_var: float, rng: np.random.Generator):
    xs, ys = [], []
    for p in params:
        x = rng.uniform(x_range[0], x_range[1], size=n_samples)
        f = task_function(p)(x)
        y = f + math.sqrt(noise_var) * rng.standard_normal(n_samples) if noise_var > 0 else f
        xs.append(x[:, None])
        ys.append(y)
    return xs, ys


def _draw_sinusoid_params(cfg: SinusoidEnvConfig, rng, a_dist: Dist | None = None) -> SinusoidTaskParams:
    a_dist = cfg.a_dist if a_dist is None else a_dist
    return SinusoidTaskParams(float(a_dist.sample(rng)), float(cfg.b_dist.sample(rng)),
                              float(cfg.c_dist.sample(rng)), float(cfg.alpha_dist.sample(rng)))


def sample_sinusoid_pool(cfg: SinusoidEnvConfig, pool_size: int, rng: np.random.Generator) -> TaskPool:
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    params = [_draw_sinusoid_params(cfg, rng) for _ in range(pool_size)]
    xs, ys = _draw_tasks(params, cfg.x_range, cfg.n_samples, cfg.noise_var, rng)
    return TaskPool(params, xs, ys)


def sample_bo_pool(pool_size: int, n_samples: int, rng: np.random.Generator,
                   cfg: BoEnvConfig | None = None) -> TaskPool:
    cfg = BoEnvConfig() if cfg is None else cfg
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    params = [sample_bo_params(cfg, rng) for _ in range(pool_size)]
    xs, ys = _draw_tasks(params, cfg.x_range, n_samples, cfg.noise_var, rng)
    return TaskPool(params, xs, ys)


def sample_bo_params(cfg: BoEnvConfig, rng: np.random.Generator) -> BoTaskParams:
    w = cfg.w_dist.sample(rng, 3)
    return BoTaskParams(float(w[0]), float(w[1]), float(w[2]), float(cfg.alpha1_dist.sample(rng)),
                        float(cfg.alpha2_dist.sample(rng)), float(cfg.alpha3_dist.sample(rng)))


def cluster_amplitude_range(j: int) -> tuple[float, float]:
    """Amplitude interval of cluster ``j`` (0-based)."""
    return 1.1 + j * (0.1 + (j - 1) * 0.05), 1.1 + (j + 1) * (0.1 + j * 0.05)


@dataclass(frozen=True)
class ClusterEnvConfig:
    n_clusters: int = 1
    base: SinusoidEnvConfig = FIG2_ENV
    pool_size: int = 20

    def __post_init__(self):
        if self.n_clusters < 1 or self.pool_size % self.n_clusters:
            raise ValueError("n_clusters must divide pool_size")


def sample_cluster_pool(cfg: ClusterEnvConfig, rng: np.random.Generator) -> TaskPool:
    per = cfg.pool_size // cfg.n_clusters
    params, clusters = [], []
    for j in range(cfg.n_clusters):
        a_dist = Uniform(*cluster_amplitude_range(j))
        for _ in range(per):
            params.append(_draw_sinusoid_params(cfg.base, rng, a_dist))
            clusters.append(j)
    xs, ys = _draw_tasks(params, cfg.base.x_range, cfg.base.n_samples, cfg.base.noise_var, rng)
    return TaskPool(params, xs, ys, clusters=clusters)


def with_clusters(cfg: ClusterEnvConfig, n_clusters: int) -> ClusterEnvConfig:
    return replace(cfg, n_clusters=n_clusters)
