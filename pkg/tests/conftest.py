import numpy as np
import pytest

from bamld.gp import GpConfig, TaskDataset


def scalar_mlp(spec, params, x_row):
    """Loop-only evaluation of a tanh MLP, written independently of the vectorised path."""
    dims = spec.layer_dims
    h = [float(v) for v in x_row]
    i = 0
    for layer, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        W = [[float(params[i + r * b + c]) for c in range(b)] for r in range(a)]
        i += a * b
        bias = [float(params[i + c]) for c in range(b)]
        i += b
        z = [bias[c] + sum(h[r] * W[r][c] for r in range(a)) for c in range(b)]
        last = layer == len(dims) - 2
        h = z if last else [float(np.tanh(v)) for v in z]
    return h


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A.T @ A + np.eye(n)


@pytest.fixture
def small_cfg():
    return GpConfig.build(hidden=(4, 4), feature_dim=2, noise_variance=0.12)


def random_task(rng, n=5, noise=0.3, task_id=0):
    x = rng.uniform(-3, 3, size=(n, 1))
    y = np.sin(x[:, 0]) + noise * rng.normal(size=n)
    return TaskDataset(x, y, task_id)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
