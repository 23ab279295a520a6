"""Active meta-learning loop: select a task, query its labels, refit, repeat."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from bamld.acquisition import AcquisitionConfig, AcquisitionReport, select_task
from bamld.envs import (BoEnvConfig, ClusterEnvConfig, SinusoidEnvConfig, TaskPool, Uniform,
                        cluster_amplitude_range, sample_bo_pool, sample_sinusoid_pool)
from bamld.gp import condition_batch, TaskDataset
from bamld.rng import derive_rng
from bamld.svgd import ParticleEnsemble, PosteriorScoreConfig, SvgdConfig, fit_posterior


class LoopError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetaTestConfig:
    n_test_tasks: int = 20
    n_adapt: int = 5
    n_eval: int = 35

    def __post_init__(self):
        if min(self.n_test_tasks, self.n_adapt, self.n_eval) < 0 or self.n_test_tasks < 1 or self.n_eval < 1:
            raise ValueError("invalid meta-test configuration")


@dataclass
class TestTask:
    __test__ = False  # not a pytest class

    x_adapt: np.ndarray
    y_adapt: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    params: object = None


@dataclass
class RunState:
    pool: TaskPool
    selected_ids: list[int]
    ensemble: ParticleEnsemble
    round: int = 0
    history: list[dict] = field(default_factory=list)
    reports: list[AcquisitionReport] = field(default_factory=list)

    def labeled_data(self) -> list[TaskDataset]:
        return [self.pool.task(i) for i in self.selected_ids]


def sample_env_pool(env, pool_size: int, rng: np.random.Generator, n_samples: int | None = None) -> TaskPool:
    """Draw ``pool_size`` tasks from any of the environment configs."""
    if isinstance(env, SinusoidEnvConfig):
        if n_samples is not None:
            env = replace(env, n_samples=n_samples)
        return sample_sinusoid_pool(env, pool_size, rng)
    if isinstance(env, ClusterEnvConfig):
        # cluster membership drawn per task, so any pool size works
        base = env.base if n_samples is None else replace(env.base, n_samples=n_samples)
        js = rng.integers(env.n_clusters, size=pool_size)
        pools = []
        for j in js:
            sub = replace(base, a_dist=Uniform(*cluster_amplitude_range(int(j))))
            pools.append(sample_sinusoid_pool(sub, 1, rng))
        return TaskPool([p.params[0] for p in pools], [p.xs[0] for p in pools],
                        [p.hidden_y[0] for p in pools], clusters=[int(j) for j in js])
    if isinstance(env, BoEnvConfig):
        return sample_bo_pool(pool_size, env.n_samples if n_samples is None else n_samples, rng, env)
    raise TypeError(f"unsupported environment {type(env).__name__}")


def make_test_set(env, test_cfg: MetaTestConfig, rng: np.random.Generator) -> list[TestTask]:
    """Fresh tasks split into a random adaptation set and a held-out set."""
    n = test_cfg.n_adapt + test_cfg.n_eval
    pool = sample_env_pool(env, test_cfg.n_test_tasks, rng, n_samples=n)
    out = []
    for p, x, y in zip(pool.params, pool.xs, pool.hidden_y):
        perm = rng.permutation(n)
        a, e = perm[:test_cfg.n_adapt], perm[test_cfg.n_adapt:]
        out.append(TestTask(x[a], y[a], x[e], y[e], p))
    return out


def mixture_predict(ensemble: ParticleEnsemble, x_ctx, y_ctx, x_star) -> np.ndarray:
    """Equal-weight particle average of the per-particle GP conditional means."""
    mean, _ = condition_batch(ensemble.particles, x_ctx, y_ctx, x_star, ensemble.gp_config)
    return mean.mean(axis=0)


Predictor = Callable[[TestTask], np.ndarray]


def meta_test_rmse(ensemble: ParticleEnsemble, test_set: Sequence[TestTask],
                   predictor: Optional[Predictor] = None) -> tuple[float, list[float]]:
    """Root of the grand mean squared error over all held-out points, plus per-task RMSEs."""
    if predictor is None:
        def predictor(t):
            return mixture_predict(ensemble, t.x_adapt, t.y_adapt, t.x_eval)
    sq, per_task = [], []
    for t in test_set:
        err = (np.asarray(predictor(t)) - t.y_eval) ** 2
        sq.append(err)
        per_task.append(float(math.sqrt(np.mean(err))))
    return float(math.sqrt(np.mean(np.concatenate(sq)))), per_task


RoundCallback = Callable[[RunState], dict]


def run_active_loop(pool: TaskPool, method: str, budget: int, ensemble: ParticleEnsemble,
                    score_cfg: PosteriorScoreConfig, svgd_cfg: SvgdConfig, acq_cfg: AcquisitionConfig,
                    seed: int, warm_start: bool = True, refit_divisor: int = 4,
                    on_round: Optional[RoundCallback] = None) -> RunState:
    """Run ``budget`` rounds of select -> label -> refit on ``pool`` (mutated in place).

    Round 1 fits for ``svgd_cfg.n_steps``; later rounds warm-start from the
    previous ensemble with ``n_steps // refit_divisor`` steps, or refit from
    the initial ensemble with the full count when ``warm_start`` is off.
    """
    if budget > len(pool.unlabeled_ids):
        raise LoopError(f"budget {budget} exceeds the {len(pool.unlabeled_ids)} unlabeled tasks")
    initial = ensemble
    state = RunState(pool, [], ensemble)
    for r in range(1, budget + 1):
        candidates = [pool.task(i) for i in pool.unlabeled_ids]
        if not candidates:
            raise LoopError(f"pool exhausted at round {r}")
        report = select_task(candidates, state.labeled_data(), state.ensemble, method, acq_cfg, seed, r)
        pool.label(report.chosen)
        state.selected_ids.append(report.chosen)
        if warm_start and r > 1:
            start, steps = state.ensemble, max(1, svgd_cfg.n_steps // refit_divisor)
        else:
            start, steps = initial, svgd_cfg.n_steps
        state.ensemble = fit_posterior(start, state.labeled_data(), score_cfg, svgd_cfg,
                                       derive_rng(seed, "svgd", r), n_steps=steps)
        state.round = r
        state.reports.append(report)
        record = {"round": r, "method": method, "chosen": report.chosen, "report": report.to_dict()}
        if on_round is not None:
            record.update(on_round(state))
        state.history.append(record)
    return state


def rmse_curve(pool: TaskPool, method: str, budget: int, ensemble: ParticleEnsemble,
               score_cfg: PosteriorScoreConfig, svgd_cfg: SvgdConfig, acq_cfg: AcquisitionConfig,
               test_set: Sequence[TestTask], seed: int, **loop_kw) -> tuple[list[tuple[int, float]], RunState]:
    """Meta-test RMSE after each acquisition round."""
    def evaluate(state: RunState) -> dict:
        return {"rmse": meta_test_rmse(state.ensemble, test_set)[0]}

    state = run_active_loop(pool, method, budget, ensemble, score_cfg, svgd_cfg, acq_cfg, seed,
                            on_round=evaluate, **loop_kw)
    return [(h["round"], h["rmse"]) for h in state.history], state
