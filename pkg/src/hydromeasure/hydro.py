"""Velocity and current fields, hydrodynamic trajectories and support transport."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .errors import DegenerateStateError, GridMismatchError, ResolutionError, SamplingError, TimeGridError
from .grid import (DEFAULT_NODE_THRESHOLD, DEFAULT_SUPPORT_EPS, Axis, ManyBodyWavefunction, PolarFields,
                   SpatialGrid, SupportMask, check_same_grid, compute_support, polar_decompose)

# Trajectories start inside the eps=1e-6 support (R > 1e-3 max R); the node
# buffer must sit well below that so support-edge starts are not frozen at once.
TRAJECTORY_NODE_THRESHOLD = 1e-6

STATUS_OK, STATUS_NEAR_NODE, STATUS_LEFT_GRID = "ok", "near_node", "left_grid"


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: SpatialGrid
    v: tuple[np.ndarray, ...]  # zero where invalid
    valid_mask: np.ndarray
    time: float = 0.0


@dataclass(frozen=True, eq=False)
class CurrentField:
    grid: SpatialGrid
    J: tuple[np.ndarray, ...]
    time: float = 0.0
    max_discrepancy: float = 0.0  # max |J - R^2 v| / max (hbar/m)|psi||grad psi|, valid points


def _phase_gradient(phase: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Second-order gradient of an unwrapped phase, from wrapped increments."""
    d = np.moveaxis(_wrap(np.diff(phase, axis=axis)), axis, 0)
    n = d.shape[0] + 1
    g = np.empty((n,) + d.shape[1:])
    g[1:-1] = (d[:-1] + d[1:]) / (2 * dx)
    first, last = (3 * d[0] - d[1]) / (2 * dx), (3 * d[-1] - d[-2]) / (2 * dx)
    g[0] = np.where(np.isnan(first), d[0] / dx, first)
    g[-1] = np.where(np.isnan(last), d[-1] / dx, last)
    return np.moveaxis(g, 0, axis)


def velocity_field(polar: PolarFields, masses: Sequence[float], hbar: float | None = None,
                   time: float = 0.0) -> VelocityField:
    """``v^k = grad_k S / m_k`` by central differences, excluding a one-cell buffer around nodes."""
    grid = polar.grid
    hbar = polar.hbar if hbar is None else hbar
    structure = ndimage.generate_binary_structure(grid.n_coords, grid.n_coords)
    valid = ~ndimage.binary_dilation(polar.node_mask, structure=structure)
    if not valid.any():
        raise DegenerateStateError("no valid points left for the velocity field")
    phase = polar.S / polar.hbar
    ms = grid.coordinate_masses(masses)
    vs = []
    for c, (dx, m) in enumerate(zip(grid.spacings, ms)):
        g = hbar * _phase_gradient(phase, c, dx) / m
        g = np.where(valid & np.isfinite(g), g, 0.0)
        vs.append(g)
    valid = valid & np.all([np.isfinite(g) for g in vs], axis=0)
    return VelocityField(grid, tuple(vs), valid, time)


def _spectral_derivative(amps: np.ndarray, axis: int, dx: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(amps.shape[axis], d=dx)
    shape = [1] * amps.ndim
    shape[axis] = -1
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(amps, axis=axis), axis=axis)


def _central(a: np.ndarray, dx: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / (2 * dx)
    return np.gradient(a, dx, axis=axis, edge_order=2)


def current_density(psi: ManyBodyWavefunction, method: str = "spectral",
                    node_threshold: float = DEFAULT_NODE_THRESHOLD, boundary: str = "open") -> CurrentField:
    """``J^k = (hbar/m_k) Im(psi* grad_k psi)`` and its discrepancy against ``R^2 v^k``.

    ``method='spectral'`` differentiates in Fourier space (the periodic box);
    ``method='central'`` uses second-order central differences, wrapped around
    the box when ``boundary='periodic'`` and one-sided at the ends otherwise.
    The reported discrepancy is ``max|J - R^2 v|`` over valid points divided by
    ``max (hbar/m)|psi||grad psi|``.
    """
    grid = psi.grid
    amps = psi.amplitudes
    Js, bounds = [], []
    for c, (dx, m) in enumerate(zip(grid.spacings, psi.coordinate_masses)):
        if method == "spectral":
            d = _spectral_derivative(amps, c, dx)
        elif method == "central":
            d = _central(amps, dx, c, boundary == "periodic")
        else:
            raise ValueError(f"unknown derivative method {method!r}")
        Js.append(psi.hbar / m * np.imag(np.conj(amps) * d))
        bounds.append(psi.hbar / m * np.abs(amps) * np.abs(d))  # |J| <= (hbar/m)|psi||d psi|
    polar = polar_decompose(psi, node_threshold, unwrap=False)
    vel = velocity_field(polar, psi.masses)
    rho = polar.R ** 2
    ok = vel.valid_mask
    diff = max(float(np.max(np.abs(J - rho * v)[ok])) for J, v in zip(Js, vel.v))
    # relative to the largest current the local amplitudes allow, so a real state does not divide noise by noise
    scale = max(float(np.max(b[ok])) for b in bounds)
    return CurrentField(grid, tuple(Js), psi.time, diff / scale if scale > 0 else 0.0)


def continuity_residual(snapshots: Sequence[ManyBodyWavefunction], dt: float,
                        node_threshold: float = DEFAULT_NODE_THRESHOLD, boundary: str = "periodic") -> float:
    """Max of ``|d_t R^2 + div J|`` (central in time and space) scaled by ``dt / max R^2``.

    ``boundary='periodic'`` wraps the spatial differences around the box, as the
    default propagator does; anything else uses one-sided differences at the ends.
    """
    if len(snapshots) != 3:
        raise ValueError("need exactly three consecutive snapshots")
    a, b, c = snapshots
    check_same_grid(a.grid, b.grid, c.grid)
    tol = 1e-9 * abs(dt) + 1e-12
    if abs((b.time - a.time) - dt) > tol or abs((c.time - b.time) - dt) > tol:
        raise TimeGridError(f"snapshot times {a.time}, {b.time}, {c.time} are not spaced by dt={dt}")
    drho = (c.density - a.density) / (2 * dt)
    periodic = boundary == "periodic"
    cur = current_density(b, method="central", node_threshold=node_threshold, boundary=boundary)
    div = sum(_central(J, dx, k, periodic) for k, (J, dx) in enumerate(zip(cur.J, b.grid.spacings)))
    polar = polar_decompose(b, node_threshold, unwrap=False)
    valid = velocity_field(polar, b.masses).valid_mask
    return float(np.max(np.abs(drho + div)[valid]) * abs(dt) / b.density.max())


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class SampleSpec:
    count: int = 100
    mode: str = "density"  # "uniform", "density" or "cells" (every cell centre of D_0)
    seed: int = 0
    eps: float = DEFAULT_SUPPORT_EPS

    def __post_init__(self):
        if self.mode not in ("uniform", "density", "cells"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.mode != "cells" and self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    grid: SpatialGrid
    initial_points: np.ndarray  # (M, n_coords)
    paths: np.ndarray  # (M, T, n_coords)
    weights: np.ndarray  # (M,)
    times: np.ndarray  # (T,)
    status: np.ndarray  # (M,) of str

    def __len__(self):
        return len(self.initial_points)

    def positions(self, i: int) -> np.ndarray:
        return self.paths[:, i, :]

    @property
    def final(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def subset(self, idx) -> "TrajectoryEnsemble":
        return TrajectoryEnsemble(self.grid, self.initial_points[idx], self.paths[idx], self.weights[idx],
                                  self.times, self.status[idx])


def sample_initial_points(psi: ManyBodyWavefunction, spec: SampleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Start points in the support of ``psi`` and their measure weights ``R^2 dV``."""
    grid = psi.grid
    rho = psi.density
    support = rho > spec.eps * rho.max()
    cells = np.argwhere(support)
    if len(cells) == 0:
        raise DegenerateStateError("initial support is empty")
    lo = np.array([ax.x_min for ax in grid.axes])
    dx = np.array(grid.spacings)
    dV = grid.cell_volume
    cell_rho = rho[tuple(cells.T)]
    if spec.mode == "cells":
        return lo + cells * dx, cell_rho * dV
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "uniform":
        pick = rng.integers(0, len(cells), size=spec.count)
    else:
        pick = rng.choice(len(cells), size=spec.count, p=cell_rho / cell_rho.sum())
    jitter = rng.uniform(-0.5, 0.5, size=(spec.count, grid.n_coords))
    hi = np.array([ax.x_max for ax in grid.axes])
    points = np.clip(lo + (cells[pick] + jitter) * dx, lo, hi)
    if spec.mode == "uniform":
        weights = _interp(rho, grid, points) * len(cells) * dV / spec.count
    else:
        weights = np.full(spec.count, cell_rho.sum() * dV / spec.count)
    return points, weights


def _fractional_index(grid: SpatialGrid, points: np.ndarray) -> np.ndarray:
    lo = np.array([ax.x_min for ax in grid.axes])
    return ((points - lo) / np.array(grid.spacings)).T


def _interp(field: np.ndarray, grid: SpatialGrid, points: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(field, _fractional_index(grid, points), order=1, mode="nearest")


class _FieldSample:
    """Velocity arrays and validity indicator of one snapshot, ready for multilinear lookup."""

    def __init__(self, psi: ManyBodyWavefunction, node_threshold: float):
        vel = velocity_field(polar_decompose(psi, node_threshold, unwrap=False), psi.masses, time=psi.time)
        self.grid = psi.grid
        self.v = vel.v
        self.valid = vel.valid_mask.astype(float)

    def __call__(self, points):
        v = np.stack([_interp(c, self.grid, points) for c in self.v], axis=1)
        ok = _interp(self.valid, self.grid, points) > 1 - 1e-9
        return v, ok


def _inside(grid: SpatialGrid, points: np.ndarray) -> np.ndarray:
    lo = np.array([ax.x_min for ax in grid.axes])
    hi = np.array([ax.x_max for ax in grid.axes])
    return np.all((points >= lo) & (points <= hi), axis=1)


def _rk4_chunk(fields, times, start):
    """Fixed-step RK4 through the snapshot sequence; frozen trajectories keep their last position."""
    grid = fields[0].grid
    x = start.copy()
    m = len(x)
    paths = np.empty((m, len(times), x.shape[1]))
    paths[:, 0] = x
    status = np.full(m, STATUS_OK, dtype=object)
    live = _inside(grid, x)
    status[~live] = STATUS_LEFT_GRID
    _, ok0 = fields[0](x)
    status[live & ~ok0] = STATUS_NEAR_NODE
    live &= ok0
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        f0, f1 = fields[i], fields[i + 1]
        idx = np.flatnonzero(live)
        if idx.size:
            xs = x[idx]

            def mid(p):
                va, oka = f0(p)
                vb, okb = f1(p)
                return 0.5 * (va + vb), oka & okb

            k1, ok1 = f0(xs)
            p2 = xs + 0.5 * h * k1
            k2, ok2 = mid(p2)
            p3 = xs + 0.5 * h * k2
            k3, ok3 = mid(p3)
            p4 = xs + h * k3
            k4, ok4 = f1(p4)
            new = xs + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            inside = _inside(grid, p2) & _inside(grid, p3) & _inside(grid, p4) & _inside(grid, new)
            _, ok_new = f1(new)
            good = inside & ok1 & ok2 & ok3 & ok4 & ok_new
            status[idx[~inside]] = STATUS_LEFT_GRID
            status[idx[inside & ~good]] = STATUS_NEAR_NODE
            live[idx[~good]] = False
            x[idx[good]] = new[good]
        paths[:, i + 1] = x
    return paths, status


def default_workers() -> int:
    return max(1, int(os.environ.get("HYDROMEASURE_WORKERS", "1")))


def integrate_trajectories(snapshots: Sequence[ManyBodyWavefunction], sample_spec: SampleSpec | None = None,
                           initial_points: np.ndarray | None = None, weights: np.ndarray | None = None,
                           node_threshold: float = TRAJECTORY_NODE_THRESHOLD,
                           workers: int | None = None) -> TrajectoryEnsemble:
    """Integrate ``d phi/dt = v(phi, t)`` with RK4, one step per snapshot interval.

    Velocity is interpolated multilinearly in space and linearly in time.  Start
    points come from ``sample_spec`` (drawn in the support of the first snapshot)
    or are given explicitly.  Snapshots may run backwards in time.
    """
    if len(snapshots) < 1:
        raise ValueError("need at least one snapshot")
    grid = snapshots[0].grid
    check_same_grid(*[s.grid for s in snapshots])
    times = np.array([s.time for s in snapshots])
    if initial_points is None:
        points, w = sample_initial_points(snapshots[0], sample_spec or SampleSpec())
    else:
        points = np.atleast_2d(np.asarray(initial_points, dtype=float))
        if points.shape[1] != grid.n_coords:
            points = points.reshape(-1, grid.n_coords)
        w = _interp(snapshots[0].density, grid, points) * grid.cell_volume if weights is None else np.asarray(weights)
    workers = default_workers() if workers is None else workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        fields = list(pool.map(lambda s: _FieldSample(s, node_threshold), snapshots))
        chunks = np.array_split(np.arange(len(points)), workers)
        results = list(pool.map(lambda c: _rk4_chunk(fields, times, points[c]), chunks))
    paths = np.concatenate([r[0] for r in results], axis=0)
    status = np.concatenate([r[1] for r in results]).astype(str)
    return TrajectoryEnsemble(grid, points.copy(), paths, np.asarray(w, dtype=float), times, status)


def write_trajectories(path: str | Path, ens: TrajectoryEnsemble):
    """Columnar text: ``id t x0 ... weight status``, one row per (trajectory, time)."""
    names = ["id", "t"] + [f"x{i}" for i in range(ens.grid.n_coords)] + ["weight", "status"]
    with open(path, "w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        for i in range(len(ens)):
            for j, t in enumerate(ens.times):
                coords = " ".join(repr(float(c)) for c in ens.paths[i, j])
                fh.write(f"{i} {float(t)!r} {coords} {float(ens.weights[i])!r} {ens.status[i]}\n")


# ---------------------------------------------------------------------------
# corollaries and support transport

@dataclass(frozen=True)
class NoCrossingReport:
    order_preserved: bool | None  # None when there is no total order to check
    degenerate: bool
    min_distance: float
    flagged: bool
    per_coordinate_order: tuple[bool, ...] = ()


def check_no_crossing(ens: TrajectoryEnsemble) -> NoCrossingReport:
    """Check that distinct trajectories never meet.

    For one coordinate the sorted order of positions must be the same at every
    time.  In configuration spaces of higher dimension the minimum pairwise
    distance over the run is reported and flagged if it drops below one cell
    and below half the smallest starting separation.
    """
    cell = min(ens.grid.spacings)
    start = ens.paths[:, 0, :]
    if ens.grid.n_coords == 1:
        order = np.argsort(start[:, 0], kind="stable")
        gaps = np.diff(ens.paths[order, :, 0], axis=0)
        coincident = gaps[:, 0] == 0
        degenerate = bool(coincident.any())
        distinct = gaps[~coincident]
        preserved = bool(np.all(distinct > 0))
        min_gap = float(distinct.min()) if distinct.size else np.inf
        return NoCrossingReport(preserved, degenerate, min_gap, degenerate or not preserved)
    min_d = np.inf
    for j in range(len(ens.times)):
        if len(ens) < 2:
            break
        d, _ = cKDTree(ens.paths[:, j, :]).query(ens.paths[:, j, :], k=2)
        min_d = min(min_d, float(d[:, 1].min()))
    d0, _ = cKDTree(start).query(start, k=2) if len(ens) > 1 else (np.full((1, 2), np.inf), None)
    degenerate = bool(np.any(d0[:, 1] == 0))
    per_coord = []
    for c in range(ens.grid.n_coords):
        order = np.argsort(start[:, c], kind="stable")
        per_coord.append(bool(np.all(np.diff(ens.paths[order, :, c], axis=0) > 0)))
    # starts that are already close are not evidence of crossing; flag only a genuine approach
    close = min_d < min(cell, 0.5 * float(d0[:, 1].min()))
    return NoCrossingReport(None, degenerate, min_d, degenerate or close, tuple(per_coord))


def advect_support(mask0: SupportMask, ens_dense: TrajectoryEnsemble, maskT: SupportMask) -> float:
    """Relative symmetric difference ``|phi_T(D_0) Δ D_T| / |D_T|``.

    ``ens_dense`` must start at every cell centre of ``mask0``.  The image of a
    start cell is the box between the midpoints of its endpoint and those of its
    lattice neighbours; image cells are those whose centres fall in a box.
    """
    grid = mask0.grid
    if maskT.grid != grid or ens_dense.grid != grid:
        raise GridMismatchError("masks and ensemble must share a grid")
    idx = grid.index_of(ens_dense.initial_points)
    n0 = int(np.count_nonzero(mask0.mask))
    ids = np.full(grid.shape, -1)
    inside = np.all((idx >= 0) & (idx < np.array(grid.shape)), axis=1)
    idx = idx[inside]
    ids[tuple(idx.T)] = np.flatnonzero(inside)
    covered = np.count_nonzero((ids >= 0) & mask0.mask)
    if covered < n0:
        raise SamplingError(f"ensemble covers {covered} of {n0} support cells")
    end = ens_dense.final
    lo_grid = np.array([ax.x_min for ax in grid.axes])
    dx = np.array(grid.spacings)
    image = np.zeros(grid.shape, dtype=bool)
    shape = np.array(grid.shape)
    for cell in np.argwhere(mask0.mask):
        i = ids[tuple(cell)]
        e = end[i]
        lo, hi = e.copy(), e.copy()
        for a in range(grid.n_coords):
            nb = []
            for step in (-1, 1):
                c2 = cell.copy()
                c2[a] += step
                j = ids[tuple(c2)] if 0 <= c2[a] < shape[a] and mask0.mask[tuple(c2)] else -1
                nb.append(end[j, a] if j >= 0 else None)
            left = (e[a] + nb[0]) / 2 if nb[0] is not None else (e[a] - (nb[1] - e[a]) / 2 if nb[1] is not None else e[a] - dx[a] / 2)
            right = (e[a] + nb[1]) / 2 if nb[1] is not None else (e[a] + (e[a] - nb[0]) / 2 if nb[0] is not None else e[a] + dx[a] / 2)
            lo[a], hi[a] = min(left, right), max(left, right)
        first = np.ceil((lo - lo_grid) / dx - 1e-9).astype(int)
        last = np.floor((hi - lo_grid) / dx + 1e-9).astype(int)
        first = np.clip(first, 0, shape - 1)
        last = np.clip(last, -1, shape - 1)
        if np.all(last >= first):
            image[tuple(slice(f, l + 1) for f, l in zip(first, last))] = True
        image[tuple(np.clip(grid.index_of(e)[0], 0, shape - 1))] = True
    n_t = np.count_nonzero(maskT.mask)
    if n_t == 0:
        raise DegenerateStateError("target support is empty")
    return float(np.count_nonzero(image ^ maskT.mask) / n_t)


@lru_cache(maxsize=32)
def _spline_antiderivative(axis: Axis):
    return CubicSpline(axis.points, np.eye(axis.n_points)).antiderivative()


def box_integral(field: np.ndarray, grid: SpatialGrid, lo: np.ndarray, hi: np.ndarray) -> float:
    """Integral of the cubic-spline interpolant of ``field`` over an axis-aligned box."""
    out = field
    for a, ax in enumerate(grid.axes):
        F = _spline_antiderivative(ax)
        w = F(hi[a]) - F(lo[a])
        out = np.tensordot(w, out, axes=([0], [0]))
    return float(out)


def measure_conservation(ens: TrajectoryEnsemble, snapshots: Sequence[ManyBodyWavefunction],
                         pairs: Sequence[tuple[int, int]] | None = None) -> float:
    """Max relative drift of ``∫_{Ω_t} R^2 dV`` over boxes spanned by trajectory pairs.

    By default trajectories ``(0, 1), (2, 3), ...`` are paired.  Only pairs whose
    members both stayed ``ok`` are used.
    """
    times = np.array([s.time for s in snapshots])
    if len(times) != len(ens.times) or not np.allclose(times, ens.times, rtol=0, atol=1e-12):
        raise TimeGridError("ensemble times do not match the snapshots")
    if pairs is None:
        pairs = [(2 * j, 2 * j + 1) for j in range(len(ens) // 2)]
    pairs = [(i, j) for i, j in pairs if ens.status[i] == STATUS_OK and ens.status[j] == STATUS_OK]
    if not pairs:
        raise SamplingError("no trajectory pair stayed valid")
    grid = ens.grid
    dx = np.array(grid.spacings)
    worst = 0.0
    for i, j in pairs:
        values = []
        for t, snap in enumerate(snapshots):
            a, b = ens.paths[i, t], ens.paths[j, t]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            if np.any(hi - lo < dx):
                raise ResolutionError(f"box of pair ({i}, {j}) collapsed below one cell at t={snap.time}")
            values.append(box_integral(snap.density, grid, lo, hi))
        values = np.array(values)
        worst = max(worst, float(np.max(np.abs(values - values[0])) / abs(values[0])))
    return worst


def support_of(psi: ManyBodyWavefunction, eps: float = DEFAULT_SUPPORT_EPS,
               node_threshold: float = DEFAULT_NODE_THRESHOLD) -> SupportMask:
    return compute_support(polar_decompose(psi, node_threshold), eps)
