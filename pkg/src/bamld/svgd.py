"""Particle approximation of the hyperparameter posterior via SVGD.

The target is a generalized posterior

    log p(theta | D) = log p(theta) + gamma * mean_tau [ lml_tau(theta) / N_tau ] + const

with an isotropic Gaussian prior. Particles move along the Stein direction

    phi(theta_i) = 1/P sum_j [ k(theta_j, theta_i) grad log p(theta_j | D)
                               + grad_{theta_j} k(theta_j, theta_i) ]

where k is an RBF kernel whose bandwidth follows the median heuristic.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from bamld.gp import GpConfig, TaskDataset, lml_and_grad_stack
from bamld.nn import MlpSpec

CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    """An update produced non-finite particle values."""


@dataclass(frozen=True)
class PosteriorScoreConfig:
    prior_variance: float = 1.0
    gamma: float = 1.0
    per_task_normalize: bool = True

    def __post_init__(self):
        if not (self.prior_variance > 0 and self.gamma >= 0):
            raise ValueError("prior_variance must be > 0 and gamma >= 0")


@dataclass(frozen=True)
class SvgdConfig:
    step_size: float = 1e-3
    n_steps: int = 10000
    kernel: str = "rbf_median_heuristic"
    task_minibatch: int = 2
    bandwidth_floor: float = 1e-6
    # "sgd": theta += step_size * phi.  "adam": phi is fed to Adam as an ascent direction.
    optimizer: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.step_size < 0 or self.n_steps < 0 or self.task_minibatch < 1:
            raise ValueError("invalid SVGD configuration")
        if self.kernel != "rbf_median_heuristic":
            raise ValueError(f"unknown SVGD kernel {self.kernel!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ParticleEnsemble:
    particles: np.ndarray  # (P, n_params)
    gp_config: GpConfig
    meta: dict = field(default_factory=dict)
    # Adam moments (m, v, t), carried across warm-started fits; not checkpointed
    opt_state: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=np.float64))
        if self.particles.shape[1] != self.gp_config.n_params:
            raise ValueError("particle dimension does not match the GP configuration")

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.particles.copy(), self.gp_config, dict(self.meta))

    def to_dict(self) -> dict:
        cfg = self.gp_config
        return {
            "version": CHECKPOINT_VERSION,
            "noise_variance": cfg.noise_variance,
            "mean_spec": asdict(cfg.mean_spec),
            "feature_spec": asdict(cfg.feature_spec),
            "particles": self.particles.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParticleEnsemble":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        cfg = GpConfig(MlpSpec(**d["mean_spec"]), MlpSpec(**d["feature_spec"]), d["noise_variance"])
        return cls(np.array(d["particles"], dtype=np.float64), cfg, dict(d.get("meta", {})))

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParticleEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_ensemble(gp_cfg: GpConfig, n_particles: int, rng: np.random.Generator,
                  scheme: str = "fan_in", prior_variance: float = 1.0) -> ParticleEnsemble:
    """Initial particles: fan-in scaled network init, or i.i.d. prior draws."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if scheme == "fan_in":
        parts = gp_cfg.init_theta(rng, n_particles)
    elif scheme == "prior":
        parts = rng.normal(0.0, math.sqrt(prior_variance), size=(n_particles, gp_cfg.n_params))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return ParticleEnsemble(parts, gp_cfg)


def log_prior(thetas: np.ndarray, prior_variance: float) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=np.float64)
    d = thetas.shape[-1]
    return -0.5 * np.sum(thetas * thetas, axis=-1) / prior_variance - 0.5 * d * math.log(2 * math.pi * prior_variance)


def _task_weight(task: TaskDataset, score_cfg: PosteriorScoreConfig) -> float:
    return 1.0 / task.n if score_cfg.per_task_normalize else 1.0


def _per_task_lml(theta: np.ndarray, tasks: Sequence[TaskDataset], gp_cfg: GpConfig, with_grad: bool):
    """Per-task LML values (and gradients) in input order, stacking tasks of equal size."""
    groups: dict[int, list[int]] = {}
    for k, t in enumerate(tasks):
        groups.setdefault(t.n, []).append(k)
    vals: list = [None] * len(tasks)
    grads: list = [None] * len(tasks)
    for members in groups.values():
        lml, g = lml_and_grad_stack(theta, [tasks[k] for k in members], gp_cfg, with_grad)
        for j, k in enumerate(members):
            vals[k] = lml[..., j]
            if with_grad:
                grads[k] = g[..., j, :]
    return vals, grads


def log_posterior_score(theta: np.ndarray, data: Sequence[TaskDataset],
                        score_cfg: PosteriorScoreConfig, gp_cfg: GpConfig):
    """Unnormalized generalized-posterior log density; vectorised over a leading particle axis."""
    theta = np.asarray(theta, dtype=np.float64)
    out = log_prior(theta, score_cfg.prior_variance)
    if data and score_cfg.gamma != 0:
        lml, _ = _per_task_lml(theta, data, gp_cfg, with_grad=False)
        fit = sum(_task_weight(t, score_cfg) * v for t, v in zip(data, lml))
        out = out + score_cfg.gamma * fit / len(data)
    return float(out) if np.ndim(out) == 0 else out


def log_posterior_grad(theta: np.ndarray, data: Sequence[TaskDataset],
                       score_cfg: PosteriorScoreConfig, gp_cfg: GpConfig,
                       batch: Optional[Sequence[int]] = None) -> np.ndarray:
    """Gradient of :func:`log_posterior_score`.

    With ``batch`` (indices into ``data``) the data term is the minibatch
    mean, an unbiased estimate of the full-data mean.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = -theta / score_cfg.prior_variance
    if not data or score_cfg.gamma == 0:
        return grad
    idx = list(range(len(data))) if batch is None else list(batch)
    _, grads = _per_task_lml(theta, [data[i] for i in idx], gp_cfg, with_grad=True)
    acc = np.zeros_like(theta)
    for i, g in zip(idx, grads):
        acc += _task_weight(data[i], score_cfg) * g
    return grad + score_cfg.gamma * acc / len(idx)


def median_bandwidth(particles: np.ndarray, floor: float = 1e-6) -> float:
    """median of pairwise squared distances / log(P + 1), floored."""
    P = particles.shape[0]
    if P < 2:
        return floor
    diff = particles[:, None, :] - particles[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    med = float(np.median(d2[np.triu_indices(P, k=1)]))
    return max(med / math.log(P + 1), floor)


def stein_direction(particles: np.ndarray, grads: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    P = particles.shape[0]
    h = median_bandwidth(particles, floor)
    diff = particles[:, None, :] - particles[None, :, :]
    Kxx = np.exp(-np.sum(diff * diff, axis=-1) / h)
    # sum_j grad_{theta_j} k(theta_j, theta_i) = 2/h sum_j k_ij (theta_i - theta_j)
    repulse = (2.0 / h) * (particles * Kxx.sum(axis=1)[:, None] - Kxx @ particles)
    return (Kxx @ grads + repulse) / P


GradFn = Callable[[np.ndarray, Optional[Sequence[int]]], np.ndarray]


def svgd_step(ensemble: ParticleEnsemble, data: Sequence[TaskDataset], score_cfg: PosteriorScoreConfig,
              svgd_cfg: SvgdConfig, rng: np.random.Generator,
              grad_fn: Optional[GradFn] = None) -> ParticleEnsemble:
    """One SVGD update on a task minibatch; returns a new ensemble.

    ``grad_fn(particles, batch)`` replaces the posterior gradient when given.
    """
    batch = None
    if data and len(data) > svgd_cfg.task_minibatch:
        batch = np.sort(rng.choice(len(data), size=svgd_cfg.task_minibatch, replace=False))
    parts = ensemble.particles
    if grad_fn is None:
        grads = log_posterior_grad(parts, data, score_cfg, ensemble.gp_config, batch)
    else:
        grads = grad_fn(parts, batch)
    phi = stein_direction(parts, grads, svgd_cfg.bandwidth_floor)
    opt_state = None
    if svgd_cfg.optimizer == "adam":
        b1, b2 = svgd_cfg.adam_betas
        m, v, t = ensemble.opt_state or (np.zeros_like(parts), np.zeros_like(parts), 0)
        t += 1
        m = b1 * m + (1 - b1) * phi
        v = b2 * v + (1 - b2) * phi * phi
        step = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + svgd_cfg.adam_eps)
        new = parts + svgd_cfg.step_size * step
        opt_state = (m, v, t)
    else:
        new = parts + svgd_cfg.step_size * phi
    if not np.all(np.isfinite(new)):
        bad = np.unique(np.nonzero(~np.isfinite(new))[0]).tolist()
        finite = np.abs(grads[np.isfinite(grads)])
        worst = f"{finite.max():.3g}" if finite.size else "nan"
        raise NumericalError(f"non-finite SVGD update for particles {bad}; max finite |grad| = {worst}")
    return ParticleEnsemble(new, ensemble.gp_config, dict(ensemble.meta), opt_state)


def fit_posterior(ensemble: ParticleEnsemble, data: Sequence[TaskDataset], score_cfg: PosteriorScoreConfig,
                  svgd_cfg: SvgdConfig, rng: np.random.Generator, n_steps: int | None = None,
                  grad_fn: Optional[GradFn] = None, callback=None) -> ParticleEnsemble:
    """Run ``n_steps`` (default ``svgd_cfg.n_steps``) SVGD iterations."""
    steps = svgd_cfg.n_steps if n_steps is None else n_steps
    for k in range(steps):
        ensemble = svgd_step(ensemble, data, score_cfg, svgd_cfg, rng, grad_fn)
        if callback is not None:
            callback(k, ensemble)
    return ensemble


def with_steps(cfg: SvgdConfig, n_steps: int) -> SvgdConfig:
    return replace(cfg, n_steps=n_steps)
