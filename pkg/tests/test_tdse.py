import logging

import numpy as np
import pytest

from hydromeasure import tdse
from hydromeasure.bipartite import Bipartition, schmidt_decompose
from hydromeasure.errors import GridMismatchError, NumericalBlowupError
from hydromeasure.grid import Axis, ManyBodyWavefunction, SpatialGrid
from hydromeasure.states import (box_eigenstate, free_gaussian_width, gaussian, harmonic_eigenstate, plane_wave,
                                 plane_wave_k, product_state)
from hydromeasure.tdse import EvolutionConfig, HamiltonianSpec, energy, evolve, split_step


def line(n=512, lo=-25.6, hi=25.5):
    return SpatialGrid((Axis(n, lo, hi),))


def width(psi):
    x = psi.grid.axes[0].points
    w = psi.density * psi.grid.cell_volume
    mean = np.sum(w * x)
    return np.sqrt(np.sum(w * (x - mean) ** 2)), mean


class TestSplitStep:
    @pytest.mark.parametrize("m, hbar", [(1.0, 1.0), (2.0, 0.5)])
    def test_free_gaussian_spreading(self, m, hbar):
        g = line()
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points, 0, 1.0), masses=(m,), hbar=hbar).normalized()
        out = evolve(psi, HamiltonianSpec((m,)), EvolutionConfig(0.01, 200))[-1]
        assert width(out)[0] == pytest.approx(free_gaussian_width(2.0, 1.0, m, hbar), rel=5e-3)

    def test_coherent_state_centre(self):
        g = line(512, -20, 20)
        x = g.axes[0].points
        psi = ManyBodyWavefunction(g, harmonic_eigenstate(x, 0, x0=3.0)).normalized()
        h = HamiltonianSpec((1.0,), tdse.harmonic(1.0))
        snaps = evolve(psi, h, EvolutionConfig(1e-3, 3000), snapshot_every=500)
        for s in snaps[1:]:
            assert width(s)[1] == pytest.approx(3.0 * np.cos(s.time), rel=5e-3, abs=2e-3)

    def test_plane_wave_phase(self):
        ax = Axis.periodic(64, 0, 10.0)
        g = SpatialGrid((ax,))
        psi = ManyBodyWavefunction(g, plane_wave(ax, 4)).normalized()
        dt = 0.05
        out = split_step(psi, HamiltonianSpec((1.0,)), dt)
        k = plane_wave_k(ax, 4)
        ratio = out.amplitudes / psi.amplitudes
        assert np.allclose(np.abs(ratio), 1, atol=1e-13)
        assert np.allclose(ratio, np.exp(-1j * k ** 2 * dt / 2), atol=1e-12)
        assert out.time == pytest.approx(dt)

    def test_box_eigenstate_is_stationary(self):
        ax = Axis(63, 0, 6.2)
        g = SpatialGrid((ax,))
        psi = ManyBodyWavefunction(g, box_eigenstate(ax, 3)).normalized()
        out = evolve(psi, HamiltonianSpec((1.0,)), EvolutionConfig(0.01, 50, "hard_wall"))[-1]
        L = (ax.n_points + 1) * ax.spacing
        E = (3 * np.pi / L) ** 2 / 2
        assert np.allclose(out.amplitudes, psi.amplitudes * np.exp(-1j * E * 0.5), atol=1e-12)

    def test_time_reversal(self):
        g = line(256, -15, 15)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points, 1, 0.8, 2.0)).normalized()
        h = HamiltonianSpec((1.0,), tdse.double_well(0.05, 2.0))
        fwd = split_step(psi, h, 0.02)
        back = split_step(fwd, h, -0.02)
        assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-10

    def test_per_step_norm(self):
        g = line(128, -10, 10)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points, 0, 1, 3)).normalized()
        out = split_step(psi, HamiltonianSpec((1.0,), tdse.barrier(5.0, 1.0, 2.0)), 0.01, "hard_wall")
        assert abs(out.norm_squared() - psi.norm_squared()) < 1e-12

    def test_uniform_time_dependent_potential_is_a_phase(self):
        # V = c t everywhere: exact propagator is exp(-i c t^2 / 2), which the midpoint rule reproduces
        g = line(64, -5, 5)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        c = 0.8
        h = HamiltonianSpec((1.0,), lambda coords, t: np.full(np.broadcast(*coords).shape, c * t), True)
        free = evolve(psi, HamiltonianSpec((1.0,)), EvolutionConfig(0.01, 100))[-1]
        forced = evolve(psi, h, EvolutionConfig(0.01, 100))[-1]
        assert np.allclose(forced.amplitudes, free.amplitudes * np.exp(-0.5j * c * 1.0 ** 2), atol=1e-12)

    def test_mass_mismatch(self):
        g = line(32, -3, 3)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        with pytest.raises(GridMismatchError):
            split_step(psi, HamiltonianSpec((2.0,)), 0.1)

    def test_blowup_detected(self):
        g = line(32, -3, 3)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        with pytest.raises(NumericalBlowupError):
            split_step(psi, HamiltonianSpec((1.0,), np.full(32, 1e308)), 1e10)


class TestEvolve:
    def test_zero_steps(self):
        g = line(32, -3, 3)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        assert evolve(psi, HamiltonianSpec((1.0,)), EvolutionConfig(0.1, 0)) == [psi]

    def test_snapshot_cadence_includes_final(self):
        g = line(32, -3, 3)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        snaps = evolve(psi, HamiltonianSpec((1.0,)), EvolutionConfig(0.01, 7), snapshot_every=3)
        assert [round(s.time, 10) for s in snaps] == [0.0, 0.03, 0.06, 0.07]

    def test_dt_warning(self, caplog):
        g = line(64, -3, 3)
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points)).normalized()
        with caplog.at_level(logging.WARNING):
            evolve(psi, HamiltonianSpec((1.0,)), EvolutionConfig(1.0, 1))
        assert "exceeds" in caplog.text

    @pytest.mark.parametrize("bad", [dict(dt=0, n_steps=1), dict(dt=0.1, n_steps=-1), dict(dt=0.1, n_steps=1,
                                                                                            boundary="open")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            EvolutionConfig(**bad)

    def test_separable_product_stays_product(self):
        ax = Axis(48, -8, 8)
        g = SpatialGrid((ax, ax))
        x = ax.points
        psi = product_state(g, [gaussian(x, -1, 1, 1), gaussian(x, 2, 0.7)], masses=(1.0, 2.0))
        h = HamiltonianSpec((1.0, 2.0), tdse.expression("0.1*x0**2 + 0.05*x1**4"))
        part = Bipartition.split(1, 2)
        for s in evolve(psi, h, EvolutionConfig(0.01, 100), snapshot_every=25):
            assert schmidt_decompose(s, part).p[0] > 1 - 1e-8


class TestEnergy:
    def test_ground_state(self):
        g = line(256, -10, 10)
        psi = ManyBodyWavefunction(g, harmonic_eigenstate(g.axes[0].points, 0, omega=2.0)).normalized()
        assert energy(psi, HamiltonianSpec((1.0,), tdse.harmonic(2.0))) == pytest.approx(1.0, rel=1e-10)

    def test_boosted_gaussian_kinetic(self):
        g = line()
        psi = ManyBodyWavefunction(g, gaussian(g.axes[0].points, 0, 1.0, 1.5)).normalized()
        # <p^2>/2 = (k^2 + 1/(4 sigma0^2)) / 2
        assert energy(psi, HamiltonianSpec((1.0,))) == pytest.approx((1.5 ** 2 + 0.25) / 2, rel=1e-10)


def test_potential_presets():
    coords = (np.linspace(-2, 2, 5),)
    assert np.allclose(tdse.harmonic(2.0)(coords, 0), 2.0 * coords[0] ** 2)
    assert np.allclose(tdse.double_well(1.0, 1.0)(coords, 0), (coords[0] ** 2 - 1) ** 2)
    assert np.allclose(tdse.barrier(3.0, 1.0)(coords, 0), [0, 0, 3, 0, 0])
    assert np.allclose(tdse.expression("sin(x) * t")(coords, 2.0), 2 * np.sin(coords[0]))
    assert tdse.potential_from_config({"preset": "free"}) is None
    with pytest.raises(ValueError):
        tdse.potential_from_config({"preset": "nope"})
