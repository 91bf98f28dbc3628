import numpy as np
import pytest

from hydromeasure.grid import Axis, ManyBodyWavefunction, SpatialGrid
from hydromeasure.measurement import ApparatusSpec, ObservableSpec
from hydromeasure.states import gaussian, normalize_on_axis, plane_wave

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_state(grid: SpatialGrid, seed: int) -> ManyBodyWavefunction:
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    return ManyBodyWavefunction(grid, amps).normalized()


def plane_wave_observable(n: int = 32, modes=(0, 1), eigenvalues=None) -> ObservableSpec:
    ax = Axis.periodic(n, 0.0, 2 * np.pi)
    a = np.arange(len(modes), dtype=float) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    return ObservableSpec(a, np.array([plane_wave(ax, m) for m in modes]), SpatialGrid((ax,)))


def gaussian_apparatus(centers, sigma=0.5, n=256, half_width=20.0, eps=1e-6) -> ApparatusSpec:
    ax = Axis(n, -half_width, half_width)
    ptr = np.array([normalize_on_axis(gaussian(ax.points, c, sigma), ax) for c in centers])
    return ApparatusSpec(ptr, SpatialGrid((ax,)), eps)


@pytest.fixture
def grid2():
    return SpatialGrid.uniform(24, -6.0, 6.0, n_coords=2)
