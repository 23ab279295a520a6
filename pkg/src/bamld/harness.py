"""Experiment runner: fans (seed, method) jobs out to workers and writes results.

Outputs in ``cfg.output_dir``:

    results.csv           experiment,seed,method,step,metric,value (canonically sorted)
    history.jsonl         one acquisition record per round, sorted like the CSV
    config_resolved.json  every setting the run used
    <experiment>.svg      mean +- standard error curves

Each job rebuilds its pool, test set and initial ensemble from substreams
of its seed, so results do not depend on worker count or scheduling.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from bamld.acquisition import AcquisitionConfig
from bamld.active import MetaTestConfig, make_test_set, rmse_curve, run_active_loop, sample_env_pool
from bamld.bo import BoRunConfig, EnsembleSurrogate, SquaredExpSurrogate, run_bo
from bamld.config import ExperimentConfig, dump_resolved
from bamld.envs import (FIG2_ENV, FIG3_ENV, BoEnvConfig, ClusterEnvConfig, sample_bo_params,
                        sample_cluster_pool)
from bamld.gp import GpConfig
from bamld.rng import derive_rng
from bamld.svgd import PosteriorScoreConfig, SvgdConfig, fit_posterior, init_ensemble

log = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "seed", "method", "step", "metric", "value")


@dataclass(frozen=True)
class Job:
    experiment: str
    seed: int
    method: str
    n_clusters: int = 0


@dataclass
class JobResult:
    rows: list[tuple] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)


@dataclass
class RunOutcome:
    rows: list[tuple]
    out_dir: Path
    failed_properties: list[str] = field(default_factory=list)


# ---------------------------------------------------------------- model pieces

def gp_config(cfg: ExperimentConfig, noise_variance: Optional[float] = None) -> GpConfig:
    return GpConfig.build(hidden=tuple(cfg.net_hidden), feature_dim=cfg.feature_dim,
                          noise_variance=cfg.noise_variance if noise_variance is None else noise_variance)


def score_config(cfg: ExperimentConfig) -> PosteriorScoreConfig:
    return PosteriorScoreConfig(prior_variance=cfg.prior_variance, gamma=cfg.gamma)


def svgd_config(cfg: ExperimentConfig) -> SvgdConfig:
    return SvgdConfig(step_size=cfg.svgd_step_size, n_steps=cfg.svgd_steps,
                      task_minibatch=cfg.task_minibatch, optimizer=cfg.svgd_optimizer)


def acq_config(cfg: ExperimentConfig) -> AcquisitionConfig:
    return AcquisitionConfig(subset_size=cfg.subset_size, mc_samples=cfg.mc_samples,
                             entropy_estimator=cfg.entropy_estimator)


def meta_test_config(cfg: ExperimentConfig) -> MetaTestConfig:
    return MetaTestConfig(cfg.n_test_tasks, cfg.n_adapt, cfg.n_eval)


def sinusoid_env(cfg: ExperimentConfig):
    base = FIG3_ENV if cfg.experiment == "rmse_fig3" else FIG2_ENV
    return replace(base, n_samples=cfg.samples_per_task)


def bo_env(cfg: ExperimentConfig) -> BoEnvConfig:
    return replace(BoEnvConfig(), noise_var=cfg.bo_noise_variance, n_samples=cfg.samples_per_task)


def total_loop_steps(cfg: ExperimentConfig, budget: int) -> int:
    if not cfg.warm_start:
        return cfg.svgd_steps
    return cfg.svgd_steps + (budget - 1) * max(1, cfg.svgd_steps // cfg.refit_divisor)


# ---------------------------------------------------------------- jobs

def make_jobs(cfg: ExperimentConfig) -> list[Job]:
    if cfg.experiment in ("rmse_fig2", "rmse_fig3"):
        return [Job(cfg.experiment, s, m) for s in cfg.seeds for m in cfg.methods]
    if cfg.experiment == "clusters_fig4":
        return [Job(cfg.experiment, s, m, c) for s in cfg.seeds for c in cfg.clusters for m in cfg.methods]
    if cfg.experiment == "bo_fig5":
        return [Job(cfg.experiment, s, m) for s in cfg.seeds for m in cfg.bo_schemes]
    raise ValueError(f"experiment {cfg.experiment!r} has no jobs")


def _history_records(job: Job, state) -> list[dict]:
    out = []
    for h in state.history:
        rec = {"experiment": job.experiment, "seed": job.seed, "method": job.method, "round": h["round"],
               "chosen": h["chosen"], "report": h["report"]}
        if job.n_clusters:
            rec["n_clusters"] = job.n_clusters
        out.append(rec)
    return out


def run_rmse_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    env = sinusoid_env(cfg)
    seed = job.seed
    pool = sample_env_pool(env, cfg.pool_size, derive_rng(seed, "pool"))
    test = make_test_set(env, meta_test_config(cfg), derive_rng(seed, "test"))
    ens = init_ensemble(gp_config(cfg), cfg.particles, derive_rng(seed, "init"), cfg.init_scheme, cfg.prior_variance)
    curve, state = rmse_curve(pool, job.method, cfg.budget, ens, score_config(cfg), svgd_config(cfg),
                              acq_config(cfg), test, seed, warm_start=cfg.warm_start,
                              refit_divisor=cfg.refit_divisor)
    rows = [(job.experiment, seed, job.method, r, "rmse", v) for r, v in curve]
    return JobResult(rows, _history_records(job, state))


def run_cluster_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    C, seed = job.n_clusters, job.seed
    env = ClusterEnvConfig(C, replace(FIG2_ENV, n_samples=cfg.samples_per_task), cfg.pool_size)
    pool = sample_cluster_pool(env, derive_rng(seed, "pool", C))
    test = make_test_set(env, meta_test_config(cfg), derive_rng(seed, "test", C))
    ens = init_ensemble(gp_config(cfg), cfg.particles, derive_rng(seed, "init"), cfg.init_scheme, cfg.prior_variance)
    curve, state = rmse_curve(pool, job.method, cfg.budget, ens, score_config(cfg), svgd_config(cfg),
                              acq_config(cfg), test, seed, warm_start=cfg.warm_start,
                              refit_divisor=cfg.refit_divisor)
    rows = [(job.experiment, seed, job.method, C, "rmse", curve[-1][1])]
    return JobResult(rows, _history_records(job, state))


def bo_meta_surrogate(cfg: ExperimentConfig, seed: int, scheme: str):
    """Meta-trained ensemble plus the tasks it was trained on."""
    gp_cfg = gp_config(cfg, cfg.bo_noise_variance)
    pool = sample_env_pool(bo_env(cfg), cfg.pool_size, derive_rng(seed, "pool"))
    ens = init_ensemble(gp_cfg, cfg.particles, derive_rng(seed, "init"), cfg.init_scheme, cfg.prior_variance)
    sc, sv = score_config(cfg), svgd_config(cfg)
    if scheme == "bamld":
        state = run_active_loop(pool, "bamld", cfg.budget, ens, sc, sv, acq_config(cfg), seed,
                                warm_start=cfg.warm_start, refit_divisor=cfg.refit_divisor)
        return state.ensemble, state.labeled_data(), state
    # full meta-BO: every pool task, same total number of SVGD steps as the active loop
    data = pool.reveal_all()
    ens = fit_posterior(ens, data, sc, sv, derive_rng(seed, "svgd", "full"),
                        n_steps=total_loop_steps(cfg, cfg.budget))
    return ens, data, None


def bo_run_config(cfg: ExperimentConfig) -> BoRunConfig:
    return BoRunConfig(n_iterations=cfg.bo_iterations, candidate_grid=cfg.bo_candidate_grid,
                       ucb_beta=cfg.ucb_beta, surrogate_update_steps=cfg.bo_update_steps,
                       observation_noise_var=cfg.bo_noise_variance, true_max_grid=cfg.bo_true_max_grid)


def run_bo_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    seed, scheme = job.seed, job.method
    bo_cfg = bo_run_config(cfg)
    env = bo_env(cfg)
    test_rng = derive_rng(seed, "bo_test")
    tasks = [sample_bo_params(env, test_rng) for _ in range(cfg.bo_test_tasks)]
    history: list[dict] = []
    if scheme == "vanilla":
        def make_surrogate():
            return SquaredExpSurrogate(cfg.vanilla_variance, cfg.vanilla_lengthscale, cfg.bo_noise_variance)
    else:
        ens, meta_data, state = bo_meta_surrogate(cfg, seed, scheme)
        if state is not None:
            history = _history_records(job, state)
        sc, sv = score_config(cfg), svgd_config(cfg)

        def make_surrogate():
            return EnsembleSurrogate(copy.deepcopy(ens), meta_data, sc, sv, cfg.bo_update_steps)

    traces = [run_bo(t, make_surrogate(), bo_cfg, derive_rng(seed, "bo", k)) for k, t in enumerate(tasks)]
    rows = []
    n_iter = min(len(tr.regret) for tr in traces)
    for k, tr in enumerate(traces):
        for i, ((x, y), best, reg) in enumerate(zip(tr.queries, tr.best_so_far, tr.regret), start=1):
            rows += [(job.experiment, seed, scheme, i, f"x[{k}]", x),
                     (job.experiment, seed, scheme, i, f"y[{k}]", y),
                     (job.experiment, seed, scheme, i, f"best_so_far[{k}]", best),
                     (job.experiment, seed, scheme, i, f"regret[{k}]", reg)]
    for i in range(n_iter):
        rows.append((job.experiment, seed, scheme, i + 1, "regret",
                     float(np.mean([tr.regret[i] for tr in traces]))))
    return JobResult(rows, history)


def run_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    log.info("job %s seed=%d method=%s%s", job.experiment, job.seed, job.method,
             f" C={job.n_clusters}" if job.n_clusters else "")
    if job.experiment in ("rmse_fig2", "rmse_fig3"):
        return run_rmse_job(cfg, job)
    if job.experiment == "clusters_fig4":
        return run_cluster_job(cfg, job)
    if job.experiment == "bo_fig5":
        return run_bo_job(cfg, job)
    raise ValueError(f"unknown experiment {job.experiment!r}")


def _run_job_packed(args):
    return run_job(*args)


# ---------------------------------------------------------------- output

def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def sort_key(row: tuple):
    exp, seed, method, step, metric, _ = row
    return (exp, int(seed), method, int(step), metric)


def write_csv(rows: list[tuple], path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=sort_key):
        w.writerow([r[0], int(r[1]), r[2], int(r[3]), r[4], format_value(r[5])])
    path.write_text(buf.getvalue())


def write_history(history: list[dict], path: Path) -> None:
    key = lambda h: (h["experiment"], h["seed"], h["method"], h.get("n_clusters", 0), h["round"])
    with open(path, "w") as fh:
        for h in sorted(history, key=key):
            fh.write(json.dumps(h, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, plot: bool = True) -> RunOutcome:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    dump_resolved(cfg, out / "config_resolved.json")

    if cfg.experiment == "property_suite":
        from bamld.properties import run_all
        results = run_all()
        rows = [("property_suite", 0, r.name, 0, "pass", int(r.passed)) for r in results]
        write_csv(rows, out / "results.csv")
        failed = [r.name for r in results if not r.passed]
        return RunOutcome(rows, out, failed)

    jobs = make_jobs(cfg)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as ex:
            results = list(ex.map(_run_job_packed, [(cfg, j) for j in jobs]))
    else:
        results = [run_job(cfg, j) for j in jobs]
    rows = [r for res in results for r in res.rows]
    history = [h for res in results for h in res.history]
    write_csv(rows, out / "results.csv")
    write_history(history, out / "history.jsonl")
    if plot:
        from bamld.plotting import plot_curves
        plot_curves(out / "results.csv", cfg.experiment, out / f"{cfg.experiment}.svg")
    return RunOutcome(rows, out)
