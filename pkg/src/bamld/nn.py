"""Dense tanh MLPs with hand-written backprop, plus Cholesky helpers.

Parameters of a network live in one flat float64 vector laid out as
``W1, b1, W2, b2, ..., W_out, b_out`` with each ``W`` stored row-major with
shape ``(fan_in, fan_out)``. Every function here also accepts a stack of
parameter vectors with shape ``(P, n_params)``; the leading axis is then
carried through all intermediate arrays so an ensemble of networks can be
evaluated with a single set of batched matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular


class ShapeError(ValueError):
    """Array dimensions do not agree with what an operation expects."""


class DecompositionError(np.linalg.LinAlgError):
    """Cholesky failed even after the maximum diagonal jitter."""

    def __init__(self, msg: str, jitter: float):
        super().__init__(msg)
        self.jitter = jitter


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden_dims + (self.output_dim,)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    def unpack(self, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``[(W, b), ...]`` into ``values``; leading batch axes are kept."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {values.shape[-1]}")
        lead = values.shape[:-1]
        layers = []
        i = 0
        dims = self.layer_dims
        for a, b in zip(dims[:-1], dims[1:]):
            W = values[..., i:i + a * b].reshape(lead + (a, b))
            i += a * b
            bias = values[..., i:i + b]
            i += b
            layers.append((W, bias))
        return layers

    def init(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Weights ~ N(0, 1/fan_in), biases zero."""
        lead = () if size is None else (size,)
        parts = []
        dims = self.layer_dims
        for a, b in zip(dims[:-1], dims[1:]):
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(a), size=lead + (a * b,)))
            parts.append(np.zeros(lead + (b,)))
        return np.concatenate(parts, axis=-1)


def _check_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != spec.input_dim:
        raise ShapeError(f"input must have trailing dim {spec.input_dim}, got shape {x.shape}")
    return x


def _rowwise_matmul(h: np.ndarray, W: np.ndarray) -> np.ndarray:
    # einsum reduces each output element in a fixed order, so a row's result
    # does not depend on how many rows share the call (BLAS gemm does)
    return np.einsum("...na,...ab->...nb", h, W)


def mlp_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, return_cache: bool = False,
                rowwise: bool = True):
    """Evaluate the network on a batch ``x`` of shape ``(N, input_dim)``.

    With ``params`` of shape ``(P, n_params)`` the result has shape
    ``(P, N, output_dim)``. ``rowwise=False`` uses BLAS matmul, which is much
    faster but may round a row differently depending on how many rows share
    the call; training code that always passes whole tasks can use it.
    """
    x = _check_input(spec, x)
    layers = spec.unpack(params)
    matmul = _rowwise_matmul if rowwise else np.matmul
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(matmul(h, W) + b[..., None, :])
        acts.append(h)
    W, b = layers[-1]
    out = matmul(h, W) + b[..., None, :]
    if return_cache:
        return out, acts
    return out


def mlp_backward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, upstream: np.ndarray,
                 cache: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Gradient of ``sum(upstream * mlp_forward(params, x))`` w.r.t. ``params``."""
    x = _check_input(spec, x)
    layers = spec.unpack(params)
    if cache is None:
        out, cache = mlp_forward(spec, params, x, return_cache=True)
        out_shape = out.shape
    else:
        out_shape = cache[-1].shape[:-1] + (spec.output_dim,)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out_shape:
        raise ShapeError(f"upstream shape {upstream.shape} != output shape {out_shape}")

    grads = []
    g = upstream
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a_in = cache[k]
        dW = np.swapaxes(a_in, -1, -2) @ g
        db = g.sum(axis=-2)
        if dW.ndim > W.ndim:
            # batched inputs through a single network: reduce the extra axes
            extra = tuple(range(dW.ndim - W.ndim))
            dW, db = dW.sum(axis=extra), db.sum(axis=extra)
        grads.append((dW, db))
        if k > 0:
            g = (g @ np.swapaxes(W, -1, -2)) * (1.0 - a_in * a_in)

    lead = np.shape(params)[:-1]
    flat = []
    for dW, db in reversed(grads):
        flat.append(dW.reshape(lead + (-1,)))
        flat.append(db.reshape(lead + (-1,)))
    return np.concatenate(flat, axis=-1)


JITTER_REL = 1e-8
JITTER_DOUBLINGS = 6


def _jittered_cholesky(a: np.ndarray) -> np.ndarray:
    scale = float(np.mean(np.abs(np.diag(a))))
    base = JITTER_REL * (scale if scale > 0 else 1.0)
    eye = np.eye(a.shape[0])
    jitter = base
    for _ in range(JITTER_DOUBLINGS):
        try:
            return np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise DecompositionError(f"matrix not positive definite after jitter {jitter / 2:.3g}", jitter / 2)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying with growing diagonal jitter on failure.

    Accepts a single matrix or a stack ``(..., n, n)``; in the stacked case
    only the members that fail are jittered.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"cholesky needs square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DecompositionError("matrix has non-finite entries", 0.0)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    if a.ndim == 2:
        return _jittered_cholesky(a)
    flat = a.reshape((-1,) + a.shape[-2:])
    out = np.empty_like(flat)
    for i, m in enumerate(flat):
        try:
            out[i] = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            out[i] = _jittered_cholesky(m)
    return out.reshape(a.shape)


def solve_cholesky(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or b.shape[0] != L.shape[0]:
        raise ShapeError(f"cannot solve with L {L.shape} and b {b.shape}")
    z = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, z, lower=False, check_finite=False)
