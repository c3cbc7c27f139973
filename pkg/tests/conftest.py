import numpy as np
import pytest

from sphere_ssc.gaussians import SemanticGaussian, VoxelGrid


def random_gaussians(rng, n, grid: VoxelGrid, channels=3, scale=(0.1, 0.5)):
    lo, hi = grid.bounds()
    return [
        SemanticGaussian(
            rng.uniform(lo, hi),
            rng.uniform(*scale, 3),
            rng.standard_normal(4),
            rng.uniform(0.1, 1.0),
            rng.standard_normal(channels),
        )
        for _ in range(n)
    ]


def naive_splat(gaussians, grid, channels):
    """Double loop over voxels and Gaussians with an explicit covariance solve."""
    out = np.zeros(grid.dims + (channels,))
    for idx in np.ndindex(*grid.dims):
        x = grid.center(*idx)
        for g in gaussians:
            d = x - g.mean
            out[idx] += g.opacity * np.exp(-0.5 * d @ np.linalg.solve(g.covariance, d)) * g.semantics
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
