import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bamld.acquisition import (AcquisitionConfig, SelectionError, _mixture_entropy_from, aleatoric_term,
                               argmax_lowest_id, bamld_score, diversity_scores, entropy_terms, mixture_entropy,
                               select_task, subset_rows, uncertainty_score)
from bamld.gp import LOG_2PIE, GpConfig, TaskDataset, gaussian_entropy, marginal_gaussian
from bamld.svgd import ParticleEnsemble, init_ensemble

from conftest import random_task


def line_task(x_mean, task_id, n=4):
    x = x_mean + np.linspace(-0.1, 0.1, n)
    return TaskDataset(x, np.zeros(n), task_id)


@pytest.fixture
def ensemble(small_cfg):
    return init_ensemble(small_cfg, 3, np.random.default_rng(0))


@pytest.fixture
def pool():
    rng = np.random.default_rng(1)
    return [random_task(rng, n=6, task_id=i) for i in range(5)]


def test_config_validation():
    with pytest.raises(ValueError):
        AcquisitionConfig(mc_samples=0)
    with pytest.raises(ValueError):
        AcquisitionConfig(entropy_estimator="magic")
    with pytest.raises(ValueError):
        AcquisitionConfig(subset_size=0)


def test_aleatoric_term_one_point_closed_form():
    # a single particle with variance s on one point: 1/2 log(2 pi e s)
    chol = np.array([[[math.sqrt(0.7)]]])
    est, _ = _mixture_entropy_from(np.zeros((1, 1)), chol, 64, np.random.default_rng(0))
    assert est == pytest.approx(0.5 * (LOG_2PIE + math.log(0.7)), rel=1e-14)


def test_aleatoric_term_matches_per_particle_entropies(ensemble):
    x = np.linspace(-2, 2, 5)[:, None]
    per = [gaussian_entropy(marginal_gaussian(t, x, ensemble.gp_config)) for t in ensemble.particles]
    assert aleatoric_term(ensemble, x) == pytest.approx(np.mean(per), rel=1e-12)


def test_one_particle_mixture_is_exact(small_cfg):
    ens = init_ensemble(small_cfg, 1, np.random.default_rng(2))
    x = np.linspace(-1, 1, 4)[:, None]
    terms = entropy_terms(ens, x, 32, np.random.default_rng(0))
    assert terms.total == terms.aleatoric
    assert terms.total_se == 0.0 and terms.mutual_information == 0.0


def test_identical_particles_give_zero_information(small_cfg):
    ens = init_ensemble(small_cfg, 1, np.random.default_rng(3))
    dup = ParticleEnsemble(np.repeat(ens.particles, 4, axis=0), small_cfg)
    x = np.linspace(-1, 1, 3)[:, None]
    assert bamld_score(dup, x, AcquisitionConfig(mc_samples=128), np.random.default_rng(0)) == 0.0


@pytest.mark.parametrize("estimator", ["control_variate", "plain"])
def test_two_separated_modes_add_log_two(estimator):
    mean = np.array([[-50.0, 0.0], [50.0, 0.0]])
    chol = np.broadcast_to(np.eye(2), (2, 2, 2)).copy()
    est, se = _mixture_entropy_from(mean, chol, 4000, np.random.default_rng(4), estimator)
    exact = LOG_2PIE + math.log(2)
    assert abs(est - exact) < max(3 * se, 1e-9)


def test_control_variate_has_lower_error_than_plain():
    rng = np.random.default_rng(5)
    mean = rng.normal(size=(4, 3))
    chol = np.stack([np.linalg.cholesky(np.eye(3) * (1 + k)) for k in range(4)])
    _, se_cv = _mixture_entropy_from(mean, chol, 2000, np.random.default_rng(0), "control_variate")
    _, se_pl = _mixture_entropy_from(mean, chol, 2000, np.random.default_rng(0), "plain")
    assert se_cv < se_pl


def test_information_is_bounded_by_log_particles(ensemble):
    x = np.linspace(-3, 3, 6)[:, None]
    mi = bamld_score(ensemble, x, AcquisitionConfig(mc_samples=256), np.random.default_rng(0))
    assert 0.0 <= mi <= math.log(ensemble.n_particles) + 1e-12


def test_uncertainty_minus_aleatoric_is_bamld(ensemble, pool):
    cfg = AcquisitionConfig(mc_samples=64)
    u = select_task(pool, [], ensemble, "uncertainty", cfg, seed=7, round_=2)
    b = select_task(pool, [], ensemble, "bamld", cfg, seed=7, round_=2)
    for tid, (total, alea) in u.term_breakdown.items():
        assert u.scores[tid] - alea == b.scores[tid]


def test_uncertainty_grows_with_noise(small_cfg):
    theta = init_ensemble(small_cfg, 2, np.random.default_rng(6)).particles
    noisy = GpConfig(small_cfg.mean_spec, small_cfg.feature_spec, 4 * small_cfg.noise_variance)
    x = np.linspace(-1, 1, 3)[:, None]
    cfg = AcquisitionConfig(mc_samples=128)
    lo = uncertainty_score(ParticleEnsemble(theta, small_cfg), x, cfg, np.random.default_rng(0))
    hi = uncertainty_score(ParticleEnsemble(theta, noisy), x, cfg, np.random.default_rng(0))
    assert hi > lo


def test_mixture_entropy_reports_standard_error(ensemble):
    x = np.linspace(-1, 1, 3)[:, None]
    _, se = mixture_entropy(ensemble, x, 200, np.random.default_rng(0))
    assert 0.0 <= se < 0.1
    _, se1 = mixture_entropy(ensemble, x, 1, np.random.default_rng(0))
    assert se1 == math.inf


def test_diversity_scores_on_a_line():
    pool = [line_task(1.0, 1), line_task(3.0, 3)]
    selected = [line_task(0.0, 0)]
    assert diversity_scores(pool, selected) == pytest.approx({1: 1.0, 3: 3.0})
    assert diversity_scores(pool, []) == {1: 0.0, 3: 0.0}
    with pytest.raises(SelectionError):
        diversity_scores([], selected)


def test_diversity_is_max_min_not_sum():
    selected = [line_task(0.0, 0), line_task(4.0, 4)]
    pool = [line_task(2.0, 2), line_task(5.0, 5)]
    # nearest-selected distance is 2 for task 2 and 1 for task 5
    r = select_task(pool, selected, None, "diversity", AcquisitionConfig(), seed=0)
    assert r.chosen == 2


def test_diversity_invariant_to_constant_shift():
    sel = [line_task(0.0, 0), line_task(2.5, 9)]
    pool = [line_task(1.0, 1), line_task(-3.0, 3), line_task(6.0, 6)]
    shift = lambda ts: [line_task(t.x.mean() + 17.0, t.task_id) for t in ts]
    a, b = diversity_scores(pool, sel), diversity_scores(shift(pool), shift(sel))
    assert a == pytest.approx(b, rel=1e-12)


def test_injected_scores_break_ties_by_lowest_id(ensemble):
    pool = [line_task(0.0, i) for i in (4, 7, 9)]
    r = select_task(pool, [], ensemble, "bamld", AcquisitionConfig(), seed=0,
                    score_override={4: 2.0, 7: 5.0, 9: 5.0})
    assert r.chosen == 7
    assert argmax_lowest_id({3: 1.0, 1: 1.0, 2: 0.5}) == 1


@pytest.mark.parametrize("method", ["bamld", "uncertainty", "diversity", "uniform"])
def test_single_task_pool_picks_it(method, ensemble):
    r = select_task([line_task(0.0, 11)], [line_task(1.0, 2)], ensemble, method, AcquisitionConfig(mc_samples=8), 0)
    assert r.chosen == 11


def test_errors_on_empty_pool_overlap_and_unknown_method(ensemble):
    t = line_task(0.0, 1)
    with pytest.raises(SelectionError):
        select_task([], [], ensemble, "bamld", AcquisitionConfig(), 0)
    with pytest.raises(SelectionError, match="overlap"):
        select_task([t], [t], ensemble, "bamld", AcquisitionConfig(), 0)
    with pytest.raises(ValueError):
        select_task([t], [], ensemble, "greedy", AcquisitionConfig(), 0)


@settings(max_examples=10, deadline=None)
@given(perm_seed=st.integers(0, 10_000))
def test_scores_do_not_depend_on_pool_order(perm_seed):
    cfg_gp = GpConfig.build(hidden=(4, 4), feature_dim=2, noise_variance=0.12)
    ens = init_ensemble(cfg_gp, 3, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    pool = [random_task(rng, n=6, task_id=i) for i in range(5)]
    shuffled = [pool[i] for i in np.random.default_rng(perm_seed).permutation(len(pool))]
    cfg = AcquisitionConfig(mc_samples=32, subset_size=4)
    a = select_task(pool, [], ens, "bamld", cfg, seed=3, round_=1)
    b = select_task(shuffled, [], ens, "bamld", cfg, seed=3, round_=1)
    assert a.scores == b.scores and a.chosen == b.chosen


def test_uniform_is_seeded_and_report_serialises(ensemble, pool):
    a = select_task(pool, [], ensemble, "uniform", AcquisitionConfig(), seed=5, round_=3)
    b = select_task(pool, [], ensemble, "uniform", AcquisitionConfig(), seed=5, round_=3)
    assert a.chosen == b.chosen
    d = select_task(pool, [], ensemble, "bamld", AcquisitionConfig(mc_samples=16), seed=5).to_dict()
    assert d["aleatoric_form"] == "single_half" and set(d["scores"]) == {str(t.task_id) for t in pool}


def test_subset_rows_draws_without_replacement():
    t = TaskDataset(np.arange(10.0), np.zeros(10), 0)
    rows = subset_rows(t, 4, np.random.default_rng(0))
    assert rows.shape == (4, 1) and len(set(rows[:, 0])) == 4 and np.all(np.diff(rows[:, 0]) > 0)
    assert subset_rows(t, None, np.random.default_rng(0)) is t.x
    assert subset_rows(t, 50, np.random.default_rng(0)) is t.x
