import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydromeasure.errors import DegenerateStateError, GridMismatchError, NormalizationError
from hydromeasure.grid import (Axis, ManyBodyWavefunction, SpatialGrid, compute_support, inner_product,
                               polar_decompose, read_mask, read_snapshot, threshold_mask, write_snapshot)
from hydromeasure.states import gaussian, harmonic_eigenstate, plane_wave, plane_wave_k

from conftest import random_state


def wf(axis, values, **kw):
    return ManyBodyWavefunction(SpatialGrid((axis,)), values, **kw).normalized()


class TestConstruction:
    def test_axis_spacing(self):
        ax = Axis(11, 0.0, 1.0)
        assert ax.spacing == pytest.approx(0.1)
        assert ax.points[-1] == pytest.approx(1.0)

    @pytest.mark.parametrize("n, lo, hi", [(7, 0, 1), (16, 1.0, 1.0), (16, 2.0, 1.0)])
    def test_bad_axes(self, n, lo, hi):
        with pytest.raises(ValueError):
            Axis(n, lo, hi)

    def test_coordinates_must_match_particles(self):
        ax = Axis(8, 0, 1)
        with pytest.raises(ValueError):
            SpatialGrid((ax, ax, ax), dim=2)

    def test_unnormalized_rejected_by_polar(self):
        ax = Axis(32, -5, 5)
        psi = ManyBodyWavefunction(SpatialGrid((ax,)), 2 * gaussian(ax.points))
        with pytest.raises(NormalizationError):
            polar_decompose(psi)

    def test_zero_state(self):
        ax = Axis(32, -5, 5)
        psi = ManyBodyWavefunction(SpatialGrid((ax,)), np.zeros(32))
        with pytest.raises(DegenerateStateError):
            polar_decompose(psi)
        with pytest.raises(DegenerateStateError):
            psi.normalized()

    def test_non_finite_rejected(self):
        ax = Axis(8, 0, 1)
        with pytest.raises(ValueError):
            ManyBodyWavefunction(SpatialGrid((ax,)), np.full(8, np.nan))

    def test_amplitudes_read_only(self):
        ax = Axis(16, -2, 2)
        psi = wf(ax, gaussian(ax.points))
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 1.0


class TestPolar:
    def test_plane_wave_phase_is_linear(self):
        ax = Axis.periodic(64, 0.0, 2 * np.pi)
        psi = wf(ax, plane_wave(ax, 3), hbar=0.7)
        polar = polar_decompose(psi)
        assert np.ptp(polar.R) < 1e-12
        slope = np.polyfit(ax.points, polar.S, 1)[0]
        assert slope == pytest.approx(0.7 * plane_wave_k(ax, 3), rel=1e-10)
        assert np.max(np.abs(np.diff(polar.S, 2))) < 1e-9

    def test_real_gaussian_has_constant_phase(self):
        ax = Axis(128, -8, 8)
        polar = polar_decompose(wf(ax, gaussian(ax.points, 0.5, 1.0)))
        ok = ~polar.node_mask
        assert np.ptp(polar.S[ok]) < 1e-12
        # nodes only in the tails, none in the interior
        assert not polar.node_mask[np.abs(ax.points - 0.5) < 3].any()

    def test_first_excited_state_node_and_pi_jump(self):
        ax = Axis(201, -8, 8)
        polar = polar_decompose(wf(ax, harmonic_eigenstate(ax.points, 1)))
        centre = np.argmin(np.abs(ax.points))
        assert polar.node_mask[centre]
        left, right = polar.S[centre - 10], polar.S[centre + 10]
        assert abs(abs(left - right) - np.pi) < 1e-12
        region = (~polar.node_mask) & (ax.points < 0) & (np.abs(ax.points) < 4)
        assert np.ptp(polar.S[region]) < 1e-12

    def test_recombination(self, grid2):
        psi = random_state(grid2, 3)
        polar = polar_decompose(psi, 1e-3)
        ok = ~polar.node_mask
        rel = np.abs(polar.recombine()[ok] - psi.amplitudes[ok]) / np.abs(psi.amplitudes[ok])
        assert rel.max() < 1e-10
        assert np.sum(polar.R ** 2) * grid2.cell_volume == pytest.approx(1.0, abs=1e-9)

    def test_two_dimensional_unwrap_is_continuous(self):
        g = SpatialGrid.uniform(40, -4, 4, n_coords=2)
        x, y = g.coordinates()
        psi = ManyBodyWavefunction.from_function(g, lambda x, y: np.exp(-(x ** 2 + y ** 2) / 4 + 3j * x - 2j * y))
        S = polar_decompose(psi, 1e-6).S
        assert np.nanmax(np.abs(np.diff(S, axis=0))) < np.pi
        assert np.nanmax(np.abs(np.diff(S, axis=1))) < np.pi
        assert np.allclose(np.diff(S, axis=0), 3 * g.spacings[0], atol=1e-10)


class TestSupport:
    def test_zero_threshold(self):
        ax = Axis(64, -4, 4)
        psi = wf(ax, gaussian(ax.points))
        sup = compute_support(polar_decompose(psi), 0.0)
        assert sup.mask.all()

    @pytest.mark.parametrize("sigma0", [0.5, 1.0, 1.7])
    def test_gaussian_half_width(self, sigma0):
        # R^2 ∝ exp(-x^2 / (2 sigma0^2)), so the cut R^2 = eps max R^2 sits at sigma0 sqrt(-2 ln eps)
        ax = Axis(401, -20, 20)
        sup = compute_support(polar_decompose(wf(ax, gaussian(ax.points, 0, sigma0))), 1e-6)
        pts = ax.points[sup.mask]
        half = 0.5 * (pts.max() - pts.min())
        assert abs(half - sigma0 * np.sqrt(-2 * np.log(1e-6))) <= ax.spacing
        assert sup.measure == pytest.approx(np.count_nonzero(sup.mask) * ax.spacing)

    def test_two_components(self):
        ax = Axis(256, -20, 20)
        psi = wf(ax, gaussian(ax.points, -8, 1) + gaussian(ax.points, 8, 1))
        assert compute_support(polar_decompose(psi), 1e-6).n_components() == 2

    def test_complement_partitions_grid(self, grid2):
        sup = compute_support(polar_decompose(random_state(grid2, 1)), 0.2)
        assert np.all(sup.mask ^ sup.complement)

    @given(e1=st.floats(0, 0.99), e2=st.floats(0, 0.99), seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_eps(self, e1, e2, seed):
        lo, hi = sorted((e1, e2))
        rho = np.random.default_rng(seed).random((10, 12))
        assert np.all(threshold_mask(rho, hi) <= threshold_mask(rho, lo))


class TestInnerProduct:
    def test_self(self, grid2):
        psi = random_state(grid2, 5)
        assert inner_product(psi, psi) == pytest.approx(1.0, abs=1e-12)

    def test_harmonic_parity(self):
        ax = Axis(256, -10, 10)
        a, b = wf(ax, harmonic_eigenstate(ax.points, 0)), wf(ax, harmonic_eigenstate(ax.points, 1))
        assert abs(inner_product(a, b)) < 1e-10

    @pytest.mark.parametrize("m1, m2", [(0, 1), (2, -3), (5, 7)])
    def test_plane_waves_orthogonal(self, m1, m2):
        ax = Axis.periodic(48, -1.0, 3.0)
        a, b = wf(ax, plane_wave(ax, m1)), wf(ax, plane_wave(ax, m2))
        assert abs(inner_product(a, b)) < 1e-12

    def test_conjugate_symmetry(self, grid2):
        a, b = random_state(grid2, 1), random_state(grid2, 2)
        assert inner_product(a, b) == pytest.approx(np.conj(inner_product(b, a)), abs=1e-14)

    def test_grid_mismatch(self):
        a = wf(Axis(16, 0, 1), np.ones(16))
        b = wf(Axis(16, 0, 2), np.ones(16))
        with pytest.raises(GridMismatchError):
            inner_product(a, b)


def test_snapshot_round_trip(tmp_path, grid2):
    psi = random_state(grid2, 9)
    path = tmp_path / "snap.txt"
    write_snapshot(path, psi, eps=0.1)
    back = read_snapshot(path, grid2)
    assert np.array_equal(back.amplitudes, psi.amplitudes)
    assert np.array_equal(read_mask(path, grid2), threshold_mask(psi.density, 0.1))
    with open(path) as fh:
        assert fh.readline().split()[1:] == ["x0", "x1", "re_psi", "im_psi", "R", "S", "support"]


def test_index_of_round_trips_points(grid2):
    x, y = grid2.coordinates()
    pts = np.column_stack([np.broadcast_to(x, grid2.shape).ravel(), np.broadcast_to(y, grid2.shape).ravel()])
    idx = grid2.index_of(pts)
    assert np.array_equal(idx, np.argwhere(np.ones(grid2.shape, dtype=bool)))

