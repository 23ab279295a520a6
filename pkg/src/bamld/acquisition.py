"""Meta-acquisition scores for choosing the next task to label.

For candidate covariates X~ and particles theta_1..theta_P the BAMLD score is
the mutual information between the unseen labels and the hyperparameter,

    I(Y~; theta | X~, D) = H[ 1/P sum_p N(m_p, K~_p) ] - 1/P sum_p H[ N(m_p, K~_p) ].

The second term has a closed form; the entropy of the equal-weight Gaussian
mixture is estimated by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from bamld.gp import LOG_2PI, LOG_2PIE, TaskDataset, marginal_gaussian_batch
from bamld.rng import derive_rng
from bamld.svgd import ParticleEnsemble

METHODS = ("bamld", "uncertainty", "diversity", "uniform")
ESTIMATORS = ("control_variate", "plain")


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    subset_size: Optional[int] = None
    mc_samples: int = 512
    diversity_seed_rule: str = "random_first"
    tie_break: str = "lowest_task_id"
    # "control_variate" or "plain"; see _mixture_entropy_from
    entropy_estimator: str = "control_variate"

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.entropy_estimator not in ESTIMATORS:
            raise ValueError(f"unknown entropy estimator {self.entropy_estimator!r}")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")


@dataclass
class EntropyTerms:
    total: float         # MC estimate of the mixture entropy
    total_se: float
    aleatoric: float     # particle-average Gaussian entropy

    @property
    def mutual_information(self) -> float:
        return self.total - self.aleatoric


@dataclass
class AcquisitionReport:
    scores: dict[int, float]
    chosen: int
    method: str
    mc_samples_used: int = 0
    term_breakdown: dict[int, tuple[float, float]] = field(default_factory=dict)
    std_errors: dict[int, float] = field(default_factory=dict)
    # entropy terms use a single 1/2 prefactor: 1/P sum_p 1/2 log det(2 pi e K~_p)
    aleatoric_form: str = "single_half"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "chosen": self.chosen,
            "mc_samples_used": self.mc_samples_used,
            "scores": {str(k): v for k, v in self.scores.items()},
            "term_breakdown": {str(k): list(v) for k, v in self.term_breakdown.items()},
            "std_errors": {str(k): v for k, v in self.std_errors.items()},
            "aleatoric_form": self.aleatoric_form,
        }


def _components(ensemble: ParticleEnsemble, x_tilde: np.ndarray):
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.shape[0] < 1:
        raise ValueError("x_tilde must have at least one row")
    return marginal_gaussian_batch(ensemble.particles, x_tilde, ensemble.gp_config)


def _aleatoric_from_chol(chol: np.ndarray) -> float:
    M = chol.shape[-1]
    ent = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1) + 0.5 * M * LOG_2PIE
    return float(np.mean(ent))


def _mixture_entropy_from(mean: np.ndarray, chol: np.ndarray, mc_samples: int,
                          rng: np.random.Generator, estimator: str = "control_variate") -> tuple[float, float]:
    """MC estimate of H[1/P sum_p N(mean_p, chol_p chol_p^T)] and its standard error.

    Samples y_s come from a uniformly drawn component c_s. The plain estimator
    averages -log p_mix(y_s). The control-variate estimator adds
    log p_{c_s}(y_s) + H[p_{c_s}], which has zero mean, and uses the closed-form
    component entropies for the last term; what remains per sample is
    log p_{c_s}(y_s) - log p_mix(y_s), bounded in [0, log P].
    """
    P, M = mean.shape
    comp = rng.integers(P, size=mc_samples)
    z = rng.standard_normal((mc_samples, M))
    y = mean[comp] + np.einsum("sij,sj->si", chol[comp], z)
    # log N(y_s; m_p, L_p L_p^T) for every (p, s)
    L_inv = np.linalg.inv(chol)
    resid = y[None, :, :] - mean[:, None, :]                 # (P, S, M)
    u = np.einsum("pij,psj->psi", L_inv, resid)
    half_logdet = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    logp = -0.5 * np.sum(u * u, axis=-1) - half_logdet[:, None] - 0.5 * M * LOG_2PI
    # log of the component mean, shifted by the max; exact when all components coincide
    top = logp.max(axis=0)
    log_mix = top + np.log(np.mean(np.exp(logp - top), axis=0))
    if estimator == "plain":
        terms, offset = -log_mix, 0.0
    else:
        terms = logp[comp, np.arange(mc_samples)] - log_mix
        offset = _aleatoric_from_chol(chol)
    est = offset + float(np.mean(terms))
    se = float(np.std(terms, ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else float("inf")
    return est, se


def entropy_terms(ensemble: ParticleEnsemble, x_tilde: np.ndarray, mc_samples: int,
                  rng: np.random.Generator, estimator: str = "control_variate") -> EntropyTerms:
    mean, _, chol = _components(ensemble, x_tilde)
    total, se = _mixture_entropy_from(mean, chol, mc_samples, rng, estimator)
    return EntropyTerms(total, se, _aleatoric_from_chol(chol))


def aleatoric_term(ensemble: ParticleEnsemble, x_tilde: np.ndarray) -> float:
    """Particle average of 1/2 log det(2 pi e K~_theta(X~))."""
    _, _, chol = _components(ensemble, x_tilde)
    return _aleatoric_from_chol(chol)


def mixture_entropy(ensemble: ParticleEnsemble, x_tilde: np.ndarray, mc_samples: int,
                    rng: np.random.Generator, estimator: str = "control_variate") -> tuple[float, float]:
    """MC estimate of the predictive (mixture) entropy and its standard error."""
    mean, _, chol = _components(ensemble, x_tilde)
    return _mixture_entropy_from(mean, chol, mc_samples, rng, estimator)


def bamld_score(ensemble: ParticleEnsemble, x_tilde: np.ndarray, cfg: AcquisitionConfig,
                rng: np.random.Generator) -> float:
    return entropy_terms(ensemble, x_tilde, cfg.mc_samples, rng, cfg.entropy_estimator).mutual_information


def uncertainty_score(ensemble: ParticleEnsemble, x_tilde: np.ndarray, cfg: AcquisitionConfig,
                      rng: np.random.Generator) -> float:
    return entropy_terms(ensemble, x_tilde, cfg.mc_samples, rng, cfg.entropy_estimator).total


def task_representation(task: TaskDataset) -> np.ndarray:
    return task.x.mean(axis=0)


def diversity_scores(pool: Sequence[TaskDataset], selected: Sequence[TaskDataset]) -> dict[int, float]:
    """Distance from each candidate's covariate mean to the nearest selected one."""
    if not pool:
        raise SelectionError("empty pool")
    if not selected:
        return {t.task_id: 0.0 for t in pool}
    reps = np.array([task_representation(t) for t in selected])
    return {t.task_id: float(np.min(np.linalg.norm(reps - task_representation(t), axis=1)))
            for t in pool}


def argmax_lowest_id(scores: Mapping[int, float]) -> int:
    best = max(scores.values())
    return min(k for k, v in scores.items() if v == best)


def subset_rows(task: TaskDataset, subset_size: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if subset_size is None or subset_size >= task.n:
        return task.x
    idx = np.sort(rng.choice(task.n, size=subset_size, replace=False))
    return task.x[idx]


def select_task(pool: Sequence[TaskDataset], selected: Sequence[TaskDataset], ensemble: ParticleEnsemble,
                method: str, cfg: AcquisitionConfig, seed: int, round_: int = 0,
                score_override: Optional[Mapping[int, float]] = None) -> AcquisitionReport:
    """Score every candidate with ``method`` and pick the arg max (lowest id on ties).

    Randomness comes from substreams of ``(seed, round_, task_id)``, so a
    task's MC samples do not depend on which other tasks are in the pool or
    on which method is scoring it.
    """
    if not pool:
        raise SelectionError("cannot select from an empty pool")
    if method not in METHODS:
        raise ValueError(f"unknown acquisition method {method!r}")
    sel_ids = {t.task_id for t in selected}
    if any(t.task_id in sel_ids for t in pool):
        raise SelectionError("pool and selected set overlap")

    if score_override is not None:
        scores = {t.task_id: float(score_override[t.task_id]) for t in pool}
        return AcquisitionReport(scores, argmax_lowest_id(scores), method)

    if method == "uniform":
        rng = derive_rng(seed, "uniform", round_)
        chosen = pool[int(rng.integers(len(pool)))].task_id
        return AcquisitionReport({t.task_id: 0.0 for t in pool}, chosen, method)

    if method == "diversity":
        scores = diversity_scores(pool, selected)
        if not selected:
            rng = derive_rng(seed, "diversity_first", round_)
            chosen = pool[int(rng.integers(len(pool)))].task_id
        else:
            chosen = argmax_lowest_id(scores)
        return AcquisitionReport(scores, chosen, method)

    scores, breakdown, ses = {}, {}, {}
    for t in pool:
        sub_rng = derive_rng(seed, "acq", round_, t.task_id)
        x_tilde = subset_rows(t, cfg.subset_size, sub_rng)
        terms = entropy_terms(ensemble, x_tilde, cfg.mc_samples, sub_rng, cfg.entropy_estimator)
        scores[t.task_id] = terms.mutual_information if method == "bamld" else terms.total
        breakdown[t.task_id] = (terms.total, terms.aleatoric)
        ses[t.task_id] = terms.total_se
    return AcquisitionReport(scores, argmax_lowest_id(scores), method, cfg.mc_samples, breakdown, ses)
