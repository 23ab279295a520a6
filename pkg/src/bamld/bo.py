"""UCB Bayesian optimisation on 1-D objectives with GP surrogates.

Two surrogates are provided: the meta-learned particle ensemble, whose
hyperparameters keep being refined by SVGD on the queries made so far, and a
fixed zero-mean squared-exponential GP used as the vanilla baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from bamld.envs import BoTaskParams, eval_g_bo
from bamld.gp import TaskDataset, condition_batch
from bamld.nn import cholesky, solve_cholesky
from bamld.svgd import ParticleEnsemble, PosteriorScoreConfig, SvgdConfig, fit_posterior

X_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class BoRunConfig:
    n_iterations: int = 20
    candidate_grid: int = 200
    ucb_beta: float = 2.0
    surrogate_update_steps: int = 100
    observation_noise_var: float = 0.01
    true_max_grid: int = 10001
    allow_repeats: bool = True

    def __post_init__(self):
        if self.n_iterations < 1 or self.candidate_grid < 2 or self.ucb_beta < 0:
            raise ValueError("invalid BO configuration")


@dataclass
class BoTrace:
    queries: list[tuple[float, float]] = field(default_factory=list)
    best_so_far: list[float] = field(default_factory=list)
    regret: list[float] = field(default_factory=list)
    true_max: float = float("nan")


class Surrogate(Protocol):
    def observe(self, x: float, y: float) -> None: ...

    def update(self, rng: np.random.Generator) -> None: ...

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class EnsembleSurrogate:
    """Particle-mixture GP; moment-matched mean/std of the latent function."""

    def __init__(self, ensemble: ParticleEnsemble, meta_data: Sequence[TaskDataset] = (),
                 score_cfg: Optional[PosteriorScoreConfig] = None, svgd_cfg: Optional[SvgdConfig] = None,
                 update_steps: int = 0):
        self.ensemble = ensemble
        self.meta_data = list(meta_data)
        self.score_cfg = score_cfg or PosteriorScoreConfig()
        self.svgd_cfg = svgd_cfg or SvgdConfig()
        self.update_steps = update_steps
        self.xq: list[float] = []
        self.yq: list[float] = []

    def observe(self, x, y):
        self.xq.append(float(x))
        self.yq.append(float(y))

    def query_task(self) -> TaskDataset:
        return TaskDataset(np.array(self.xq)[:, None], np.array(self.yq), task_id=-1)

    def update(self, rng):
        if self.update_steps <= 0 or not self.xq:
            return
        data = self.meta_data + [self.query_task()]
        self.ensemble = fit_posterior(self.ensemble, data, self.score_cfg, self.svgd_cfg, rng,
                                      n_steps=self.update_steps)

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        ctx_x = np.array(self.xq)[:, None] if self.xq else None
        means, variances = condition_batch(self.ensemble.particles, ctx_x, np.array(self.yq), x,
                                           self.ensemble.gp_config)
        mean = means.mean(axis=0)
        var = variances.mean(axis=0) + means.var(axis=0)
        return mean, np.sqrt(var)


class SquaredExpSurrogate:
    """Zero-mean GP with k(x, x') = variance * exp(-(x - x')^2 / (2 lengthscale^2))."""

    def __init__(self, variance: float = 1.0, lengthscale: float = 1.0, noise_var: float = 0.01):
        self.variance = variance
        self.lengthscale = lengthscale
        self.noise_var = noise_var
        self.xq: list[float] = []
        self.yq: list[float] = []

    def kernel(self, a, b):
        d = np.asarray(a)[:, None] - np.asarray(b)[None, :]
        return self.variance * np.exp(-0.5 * d * d / self.lengthscale ** 2)

    def observe(self, x, y):
        self.xq.append(float(x))
        self.yq.append(float(y))

    def update(self, rng):
        pass

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if not self.xq:
            return np.zeros_like(x), np.full_like(x, np.sqrt(self.variance))
        xq = np.array(self.xq)
        L = cholesky(self.kernel(xq, xq) + self.noise_var * np.eye(xq.size))
        Ks = self.kernel(xq, x)
        mean = Ks.T @ solve_cholesky(L, np.array(self.yq))
        var = self.variance - np.sum(Ks * solve_cholesky(L, Ks), axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))


def ucb_select(surrogate: Surrogate, candidates: np.ndarray, beta: float,
               exclude: Optional[np.ndarray] = None) -> float:
    """arg max of mean + beta * std over the candidates (first index on ties)."""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1)
    if candidates.size == 0:
        raise ValueError("no candidates")
    mean, std = surrogate.predict(candidates)
    acq = mean + beta * std
    if exclude is not None:
        acq = np.where(exclude, -np.inf, acq)
    return float(candidates[int(np.argmax(acq))])


def true_maximum(task: BoTaskParams, cfg: BoRunConfig) -> float:
    """Dense-grid maximum of the objective (the candidate grid is included)."""
    dense = np.linspace(*X_RANGE, cfg.true_max_grid)
    cand = np.linspace(*X_RANGE, cfg.candidate_grid)
    return float(max(eval_g_bo(task, dense).max(), eval_g_bo(task, cand).max()))


def run_bo(task: BoTaskParams, surrogate: Surrogate, cfg: BoRunConfig, rng: np.random.Generator) -> BoTrace:
    candidates = np.linspace(*X_RANGE, cfg.candidate_grid)
    queried = np.zeros(candidates.size, dtype=bool)
    trace = BoTrace(true_max=true_maximum(task, cfg))
    best = -np.inf
    noise_sd = np.sqrt(cfg.observation_noise_var)
    # separate streams so observation noise is identical across surrogates
    noise_rng, update_rng = rng.spawn(2)
    for _ in range(cfg.n_iterations):
        if not cfg.allow_repeats and queried.all():
            break
        x = ucb_select(surrogate, candidates, cfg.ucb_beta, None if cfg.allow_repeats else queried)
        queried |= candidates == x
        g = float(eval_g_bo(task, x))
        y = g + noise_sd * float(noise_rng.standard_normal())
        surrogate.observe(x, y)
        surrogate.update(update_rng)
        best = max(best, g)
        trace.queries.append((x, y))
        trace.best_so_far.append(best)
        trace.regret.append(trace.true_max - best)
    return trace


def vanilla_bo_baseline(task: BoTaskParams, cfg: BoRunConfig, rng: np.random.Generator,
                        variance: float = 1.0, lengthscale: float = 1.0) -> BoTrace:
    return run_bo(task, SquaredExpSurrogate(variance, lengthscale, cfg.observation_noise_var), cfg, rng)
