"""Deep-kernel GP regression for a fixed hyperparameter vector.

A hyperparameter vector ``theta`` is the concatenation of the mean-network
weights and the feature-network weights (see :class:`GpConfig`). The prior
over labels of a task with covariates ``X`` is

    y ~ N(m(X), K(X) + noise_variance * I),
    m(x) = mean_net(x),  k(x, x') = 0.5 * exp(-||feat(x) - feat(x')||^2).

Functions ending in ``_batch`` take ``thetas`` of shape ``(P, n_params)`` and
vectorise over particles; the others are the single-particle public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from bamld.nn import MlpSpec, ShapeError, cholesky, mlp_backward, mlp_forward, solve_cholesky

LOG_2PI = math.log(2.0 * math.pi)
LOG_2PIE = math.log(2.0 * math.pi * math.e)


@dataclass
class TaskDataset:
    x: np.ndarray
    y: Optional[np.ndarray] = None
    task_id: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        # a flat vector is N one-dimensional covariates
        self.x = x.reshape(-1, 1) if x.ndim <= 1 else x
        if self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ShapeError("a task needs at least one covariate row")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if self.y.shape[0] != self.x.shape[0]:
                raise ShapeError(f"{self.y.shape[0]} labels for {self.x.shape[0]} covariates")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def labeled(self) -> bool:
        return self.y is not None


@dataclass(frozen=True)
class GpConfig:
    mean_spec: MlpSpec
    feature_spec: MlpSpec
    noise_variance: float = 0.12

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if self.mean_spec.output_dim != 1:
            raise ValueError("the mean network must have a scalar output")
        if self.mean_spec.input_dim != self.feature_spec.input_dim:
            raise ValueError("mean and feature networks must share the input dimension")

    @classmethod
    def build(cls, input_dim: int = 1, hidden=(32, 32), feature_dim: int = 2,
              noise_variance: float = 0.12) -> "GpConfig":
        return cls(MlpSpec(input_dim, tuple(hidden), 1),
                   MlpSpec(input_dim, tuple(hidden), feature_dim), noise_variance)

    @property
    def n_mean(self) -> int:
        return self.mean_spec.n_params

    @property
    def n_params(self) -> int:
        return self.mean_spec.n_params + self.feature_spec.n_params

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.n_params:
            raise ShapeError(f"theta has {theta.shape[-1]} entries, expected {self.n_params}")
        return theta[..., :self.n_mean], theta[..., self.n_mean:]

    def init_theta(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return np.concatenate([self.mean_spec.init(rng, size), self.feature_spec.init(rng, size)], axis=-1)


@dataclass(frozen=True)
class GpPredictive:
    """A multivariate normal with its Cholesky factor."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @classmethod
    def from_cov(cls, mean, cov) -> "GpPredictive":
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        return cls(mean, cov, cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances over the last axis; batch axes broadcast."""
    out = None
    # one coordinate at a time: avoids an (..., N, M, k) temporary
    for k in range(a.shape[-1]):
        d = a[..., :, None, k] - b[..., None, :, k]
        out = d * d if out is None else out + d * d
    return out


def _check_x(cfg: GpConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and cfg.mean_spec.input_dim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != cfg.mean_spec.input_dim:
        raise ShapeError(f"covariates must be (N, {cfg.mean_spec.input_dim}), got {x.shape}")
    return x


def features(theta: np.ndarray, x: np.ndarray, cfg: GpConfig) -> np.ndarray:
    _, wf = cfg.split(theta)
    return mlp_forward(cfg.feature_spec, wf, _check_x(cfg, x))


def mean_function(theta: np.ndarray, x: np.ndarray, cfg: GpConfig) -> np.ndarray:
    wm, _ = cfg.split(theta)
    return mlp_forward(cfg.mean_spec, wm, _check_x(cfg, x))[..., 0]


def kernel_matrix(theta: np.ndarray, x1: np.ndarray, x2: np.ndarray, cfg: GpConfig) -> np.ndarray:
    """Deep kernel Gram matrix ``0.5 * exp(-||feat(x1_i) - feat(x2_j)||^2)``."""
    f1 = features(theta, x1, cfg)
    f2 = f1 if x2 is x1 else features(theta, x2, cfg)
    return 0.5 * np.exp(-sq_dists(f1, f2))


def marginal_gaussian_batch(thetas: np.ndarray, x: np.ndarray, cfg: GpConfig):
    """Per-particle marginal means ``(P, N)``, covariances and factors ``(P, N, N)``."""
    x = _check_x(cfg, x)
    mean = mean_function(thetas, x, cfg)
    cov = kernel_matrix(thetas, x, x, cfg)
    cov = cov + cfg.noise_variance * np.eye(x.shape[0])
    return mean, cov, cholesky(cov)


def marginal_gaussian(theta: np.ndarray, x: np.ndarray, cfg: GpConfig) -> GpPredictive:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ShapeError("marginal_gaussian takes a single theta; use marginal_gaussian_batch")
    mean, cov, chol = marginal_gaussian_batch(theta, x, cfg)
    return GpPredictive(mean, cov, chol)


def _require_labels(task: TaskDataset):
    if task.y is None:
        raise ValueError(f"task {task.task_id} is unlabeled")


def _lml_core(thetas: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: GpConfig, with_grad: bool):
    """Shared body: ``x`` is ``(N, d)`` or a task stack ``(T, N, d)`` with matching ``y``.

    For a stack the parameters are laid out per task, so every result keeps a
    task axis just before the data axes.
    """
    n = x.shape[-2]
    wm, wf = cfg.split(thetas)
    m_out, m_cache = mlp_forward(cfg.mean_spec, wm, x, return_cache=True, rowwise=False)
    f, f_cache = mlp_forward(cfg.feature_spec, wf, x, return_cache=True, rowwise=False)
    K = 0.5 * np.exp(-sq_dists(f, f))
    Kt = K + cfg.noise_variance * np.eye(n)
    L = cholesky(Kt)
    L_inv = np.linalg.inv(L)
    K_inv = np.swapaxes(L_inv, -1, -2) @ L_inv
    r = y - m_out[..., 0]
    alpha = (K_inv @ r[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    lml = -0.5 * np.einsum("...i,...i->...", r, alpha) - 0.5 * logdet - 0.5 * n * LOG_2PI
    if not with_grad:
        return lml, None

    g_mean = mlp_backward(cfg.mean_spec, wm, x, alpha[..., None], cache=m_cache)
    W = 0.5 * (alpha[..., :, None] * alpha[..., None, :] - K_inv)
    G = W * K
    # d lml / d f_i = -4 sum_j G_ij (f_i - f_j), G symmetric
    d_f = -4.0 * (G.sum(axis=-1)[..., None] * f - G @ f)
    g_feat = mlp_backward(cfg.feature_spec, wf, x, d_f, cache=f_cache)
    return lml, np.concatenate([g_mean, g_feat], axis=-1)


def lml_and_grad_batch(thetas: np.ndarray, task: TaskDataset, cfg: GpConfig,
                       with_grad: bool = True):
    """Log marginal likelihood ``(P,)`` and its gradient ``(P, n_params)``.

    For residual r = y - m and alpha = K~^{-1} r the gradient w.r.t. the mean
    outputs is alpha, and w.r.t. the Gram matrix W = 0.5 (alpha alpha^T - K~^{-1}).
    The Gram gradient is pulled back onto the feature embeddings and from there
    through the feature network.
    """
    _require_labels(task)
    return _lml_core(np.asarray(thetas, dtype=np.float64), _check_x(cfg, task.x), task.y, cfg, with_grad)


def lml_and_grad_stack(thetas: np.ndarray, tasks: Sequence[TaskDataset], cfg: GpConfig,
                       with_grad: bool = True):
    """:func:`lml_and_grad_batch` for several tasks of equal size in one pass.

    Returns ``(P, T)`` values and ``(P, T, n_params)`` gradients, equal to the
    per-task results bit for bit.
    """
    if not tasks:
        raise ValueError("empty task stack")
    for t in tasks:
        _require_labels(t)
    if len({t.n for t in tasks}) != 1:
        raise ShapeError("stacked tasks must have the same number of points")
    x = np.stack([_check_x(cfg, t.x) for t in tasks])
    y = np.stack([t.y for t in tasks])
    thetas = np.asarray(thetas, dtype=np.float64)
    per_task = np.broadcast_to(thetas[..., None, :], thetas.shape[:-1] + (len(tasks), thetas.shape[-1]))
    return _lml_core(per_task, x, y, cfg, with_grad)


def log_marginal_likelihood(theta: np.ndarray, task: TaskDataset, cfg: GpConfig) -> float:
    """log N(y; m(X), K~(X)) evaluated through the Cholesky factor."""
    _require_labels(task)
    pred = marginal_gaussian(theta, task.x, cfg)
    return float(gaussian_log_density(pred, task.y))


def log_marginal_likelihood_grad(theta: np.ndarray, task: TaskDataset, cfg: GpConfig) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ShapeError("expected a single theta vector")
    return lml_and_grad_batch(theta, task, cfg)[1]


def gaussian_entropy(pred: GpPredictive) -> float:
    """Differential entropy 0.5 * log det(2 pi e cov)."""
    return float(np.log(np.diag(pred.chol)).sum() + 0.5 * pred.dim * LOG_2PIE)


def gaussian_log_density(pred: GpPredictive, y: np.ndarray) -> np.ndarray | float:
    """Log-density at ``y`` (shape ``(M,)``) or at each row of ``y`` (shape ``(S, M)``)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != pred.dim:
        raise ShapeError(f"point of dimension {y.shape[-1]} for a {pred.dim}-dim Gaussian")
    resid = (y - pred.mean).T
    z = solve_triangular(pred.chol, resid, lower=True, check_finite=False)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * quad - np.log(np.diag(pred.chol)).sum() - 0.5 * pred.dim * LOG_2PI
    return float(out) if y.ndim == 1 else out


def sample_gaussian(pred: GpPredictive, rng: np.random.Generator, size: int | None = None,
                    z: np.ndarray | None = None) -> np.ndarray:
    """Draw ``mean + L z``. ``z`` may be supplied directly (e.g. zeros in tests)."""
    if z is None:
        shape = (pred.dim,) if size is None else (size, pred.dim)
        z = rng.standard_normal(shape)
    return pred.mean + z @ pred.chol.T


def condition_batch(thetas: np.ndarray, x_ctx: np.ndarray, y_ctx: np.ndarray, x_star: np.ndarray,
                    cfg: GpConfig, full_cov: bool = False):
    """Per-particle GP posterior of the latent function at ``x_star``.

    Returns means ``(P, M)`` and either marginal variances ``(P, M)`` or full
    covariances ``(P, M, M)``. With an empty context this is the prior.
    """
    x_star = _check_x(cfg, x_star)
    m_star = mean_function(thetas, x_star, cfg)
    f_star = features(thetas, x_star, cfg)
    if full_cov:
        prior_cov = 0.5 * np.exp(-sq_dists(f_star, f_star))
    else:
        prior_var = np.full(m_star.shape, 0.5)
    if x_ctx is None or len(x_ctx) == 0:
        return (m_star, prior_cov) if full_cov else (m_star, prior_var)
    x_ctx = _check_x(cfg, x_ctx)
    y_ctx = np.asarray(y_ctx, dtype=np.float64).reshape(-1)
    m_ctx = mean_function(thetas, x_ctx, cfg)
    f_ctx = features(thetas, x_ctx, cfg)
    Kt = 0.5 * np.exp(-sq_dists(f_ctx, f_ctx)) + cfg.noise_variance * np.eye(x_ctx.shape[0])
    L = cholesky(Kt)
    L_inv = np.linalg.inv(L)
    Ks = 0.5 * np.exp(-sq_dists(f_ctx, f_star))  # (P, N, M)
    A = L_inv @ Ks
    z = L_inv @ (y_ctx - m_ctx)[..., None]
    mean = m_star + (np.swapaxes(A, -1, -2) @ z)[..., 0]
    if full_cov:
        return mean, prior_cov - np.swapaxes(A, -1, -2) @ A
    var = np.maximum(prior_var - np.sum(A * A, axis=-2), 0.0)
    return mean, var


def posterior_mean(theta: np.ndarray, x_ctx, y_ctx, x_star, cfg: GpConfig) -> np.ndarray:
    """Single-particle conditional mean m* + K*^T K~^{-1} (y - m), via Cholesky solves."""
    x_star = _check_x(cfg, x_star)
    m_star = mean_function(theta, x_star, cfg)
    if x_ctx is None or len(x_ctx) == 0:
        return m_star
    pred = marginal_gaussian(theta, x_ctx, cfg)
    Ks = kernel_matrix(theta, _check_x(cfg, x_ctx), x_star, cfg)
    return m_star + Ks.T @ solve_cholesky(pred.chol, np.asarray(y_ctx, dtype=np.float64) - pred.mean)
