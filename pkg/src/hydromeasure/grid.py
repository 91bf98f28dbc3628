"""Wavefunctions sampled on uniform tensor-product grids.

Coordinates are ordered particle-major: for ``N`` particles in ``d``
dimensions, coordinate ``c`` belongs to particle ``c // d``.  Amplitudes are
stored as an ``ndarray`` with one array axis per coordinate (``indexing='ij'``).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from .errors import DegenerateStateError, GridMismatchError, NormalizationError

NORM_TOL = 1e-9
DEFAULT_SUPPORT_EPS = 1e-6
DEFAULT_NODE_THRESHOLD = 1e-3


@dataclass(frozen=True)
class Axis:
    n_points: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"axis needs an integer n_points >= 8, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ValueError(f"axis needs x_max > x_min, got [{self.x_min}, {self.x_max}]")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def period(self) -> float:
        """Length of the periodic box the FFT sees (one extra cell past ``x_max``)."""
        return self.n_points * self.spacing

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @classmethod
    def periodic(cls, n_points: int, x_min: float, period: float) -> "Axis":
        """Axis whose FFT period is exactly ``period``."""
        dx = period / n_points
        return cls(n_points, x_min, x_min + (n_points - 1) * dx)


@dataclass(frozen=True)
class SpatialGrid:
    axes: tuple[Axis, ...]
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if self.dim not in (1, 2):
            raise ValueError("only d = 1 or d = 2 is supported")
        if not self.axes or len(self.axes) % self.dim:
            raise ValueError(f"{len(self.axes)} axes cannot be split into particles of dimension {self.dim}")

    @classmethod
    def uniform(cls, n_points: int, x_min: float, x_max: float, n_coords: int = 1, dim: int = 1) -> "SpatialGrid":
        return cls(tuple(Axis(n_points, x_min, x_max) for _ in range(n_coords)), dim)

    @property
    def n_coords(self) -> int:
        return len(self.axes)

    @property
    def n_particles(self) -> int:
        return len(self.axes) // self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n_points for ax in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(ax.spacing for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        return tuple(np.meshgrid(*[ax.points for ax in self.axes], indexing="ij", sparse=True))

    def subgrid(self, coords: Sequence[int]) -> "SpatialGrid":
        axes = tuple(self.axes[c] for c in coords)
        dim = self.dim if len(axes) % self.dim == 0 else 1
        return SpatialGrid(axes, dim)

    def product(self, other: "SpatialGrid") -> "SpatialGrid":
        dim = self.dim if self.dim == other.dim else 1
        return SpatialGrid(self.axes + other.axes, dim)

    def coordinate_masses(self, masses: Sequence[float]) -> np.ndarray:
        return np.array([masses[c // self.dim] for c in range(self.n_coords)], dtype=float)

    def index_of(self, points: np.ndarray) -> np.ndarray:
        """Nearest-cell integer index for each row of ``points``."""
        points = np.atleast_2d(points)
        lo = np.array([ax.x_min for ax in self.axes])
        dx = np.array(self.spacings)
        return np.rint((points - lo) / dx).astype(int)


@dataclass(frozen=True, eq=False)
class ManyBodyWavefunction:
    grid: SpatialGrid
    amplitudes: np.ndarray
    time: float = 0.0
    masses: tuple[float, ...] | None = None
    hbar: float = 1.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            raise GridMismatchError(f"amplitude shape {amps.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes contain NaN or Inf")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        masses = self.masses
        if masses is None:
            masses = (1.0,) * self.grid.n_particles
        masses = tuple(float(m) for m in np.atleast_1d(masses))
        if len(masses) != self.grid.n_particles or min(masses) <= 0:
            raise ValueError(f"need {self.grid.n_particles} positive masses, got {masses}")
        object.__setattr__(self, "masses", masses)
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @classmethod
    def from_function(cls, grid: SpatialGrid, func: Callable[..., np.ndarray], normalize: bool = True,
                      **kwargs) -> "ManyBodyWavefunction":
        amps = np.broadcast_to(func(*grid.coordinates()), grid.shape).astype(complex)
        if normalize:
            amps = _normalized(amps, grid.cell_volume)
        return cls(grid, amps, **kwargs)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def coordinate_masses(self) -> np.ndarray:
        return self.grid.coordinate_masses(self.masses)

    def norm_squared(self) -> float:
        return float(np.sum(self.density) * self.grid.cell_volume)

    def require_normalized(self, tol: float = NORM_TOL):
        n2 = self.norm_squared()
        if n2 == 0:
            raise DegenerateStateError("wavefunction vanishes identically")
        if abs(n2 - 1.0) >= tol:
            raise NormalizationError(f"|psi|^2 integrates to {n2!r}, not 1")

    def normalized(self) -> "ManyBodyWavefunction":
        return self.replace(_normalized(self.amplitudes, self.grid.cell_volume))

    def replace(self, amplitudes: np.ndarray, time: float | None = None) -> "ManyBodyWavefunction":
        return ManyBodyWavefunction(self.grid, amplitudes, self.time if time is None else time,
                                    self.masses, self.hbar)


def _normalized(amps: np.ndarray, cell_volume: float) -> np.ndarray:
    n2 = np.sum(np.abs(amps) ** 2) * cell_volume
    if n2 == 0:
        raise DegenerateStateError("cannot normalize an all-zero state")
    return amps / np.sqrt(n2)


@dataclass(frozen=True, eq=False)
class PolarFields:
    grid: SpatialGrid
    R: np.ndarray
    S: np.ndarray  # NaN on node points
    node_mask: np.ndarray
    hbar: float = 1.0

    def recombine(self) -> np.ndarray:
        """``R exp(iS/hbar)`` with zeros on node points."""
        out = np.zeros(self.grid.shape, dtype=complex)
        ok = ~self.node_mask
        out[ok] = self.R[ok] * np.exp(1j * self.S[ok] / self.hbar)
        return out


@dataclass(frozen=True, eq=False)
class SupportMask:
    grid: SpatialGrid
    mask: np.ndarray
    threshold: float = DEFAULT_SUPPORT_EPS

    @property
    def measure(self) -> float:
        return float(np.count_nonzero(self.mask) * self.grid.cell_volume)

    @property
    def complement(self) -> np.ndarray:
        return ~self.mask

    def n_components(self) -> int:
        return ndimage.label(self.mask)[1]


def polar_decompose(psi: ManyBodyWavefunction, node_threshold: float = DEFAULT_NODE_THRESHOLD,
                    unwrap: bool = True) -> PolarFields:
    """Split ``psi`` into amplitude ``R`` and phase-action ``S``.

    Points with ``R <= node_threshold * max(R)`` are nodes.  ``S`` is unwrapped
    independently on each connected non-node region, so the phase offset between
    regions separated by a node is arbitrary (a sign change shows up as ``pi*hbar``).
    ``unwrap=False`` keeps the principal branch, which is enough for gradients.
    """
    if not 0 < node_threshold < 1:
        raise ValueError("node_threshold must lie in (0, 1)")
    if not np.any(psi.amplitudes):
        raise DegenerateStateError("all amplitudes are zero")
    psi.require_normalized()
    R = np.abs(psi.amplitudes)
    node_mask = R <= node_threshold * R.max()
    if unwrap:
        phase = unwrap_phase(np.angle(psi.amplitudes), ~node_mask)
    else:
        phase = np.where(node_mask, np.nan, np.angle(psi.amplitudes))
    return PolarFields(psi.grid, R, psi.hbar * phase, node_mask, psi.hbar)


def unwrap_phase(phase: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Unwrap ``phase`` along a spanning tree of each connected ``valid`` region."""
    out = np.full(phase.shape, np.nan)
    labels, n_regions = ndimage.label(valid)
    if n_regions == 0:
        return out
    if phase.ndim == 1:
        for sl in ndimage.find_objects(labels):
            out[sl] = np.unwrap(phase[sl])
        return out

    flat_phase = phase.ravel()
    flat_valid = valid.ravel()
    idx = np.arange(phase.size).reshape(phase.shape)
    rows, cols = [], []
    for ax in range(phase.ndim):
        a = np.take(idx, np.arange(phase.shape[ax] - 1), axis=ax).ravel()
        b = np.take(idx, np.arange(1, phase.shape[ax]), axis=ax).ravel()
        keep = flat_valid[a] & flat_valid[b]
        rows.append(a[keep])
        cols.append(b[keep])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(phase.size, phase.size)).tocsr()

    flat_out = out.ravel()
    flat_labels = labels.ravel()
    for region in range(1, n_regions + 1):
        root = int(np.argmax(flat_labels == region))
        order, pred = breadth_first_order(graph, root, directed=False, return_predecessors=True)
        flat_out[root] = flat_phase[root]
        for j in order[1:]:
            p = pred[j]
            step = flat_phase[j] - flat_phase[p]
            flat_out[j] = flat_out[p] + (step + np.pi) % (2 * np.pi) - np.pi
    return flat_out.reshape(phase.shape)


def threshold_mask(density: np.ndarray, eps: float) -> np.ndarray:
    """``density > eps * max(density)``; ``eps = 0`` keeps every nonzero cell."""
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    return density > eps * density.max()


def compute_support(polar: PolarFields, eps: float = DEFAULT_SUPPORT_EPS) -> SupportMask:
    """Discrete support: cells with ``R^2`` above ``eps`` times its maximum."""
    return SupportMask(polar.grid, threshold_mask(polar.R ** 2, eps), eps)


def check_same_grid(*grids: SpatialGrid):
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError("wavefunctions live on different grids")


def inner_product(a: ManyBodyWavefunction, b: ManyBodyWavefunction) -> complex:
    check_same_grid(a.grid, b.grid)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.cell_volume)


# ---------------------------------------------------------------------------
# columnar text snapshots

def snapshot_table(psi: ManyBodyWavefunction, eps: float = DEFAULT_SUPPORT_EPS,
                   node_threshold: float = DEFAULT_NODE_THRESHOLD) -> tuple[list[str], np.ndarray]:
    polar = polar_decompose(psi, node_threshold)
    support = compute_support(polar, eps)
    coords = [np.broadcast_to(c, psi.grid.shape).ravel() for c in psi.grid.coordinates()]
    names = [f"x{i}" for i in range(psi.grid.n_coords)] + ["re_psi", "im_psi", "R", "S", "support"]
    cols = coords + [psi.amplitudes.real.ravel(), psi.amplitudes.imag.ravel(), polar.R.ravel(),
                     polar.S.ravel(), support.mask.ravel().astype(float)]
    return names, np.column_stack(cols)


def write_snapshot(path: str | Path, psi: ManyBodyWavefunction, eps: float = DEFAULT_SUPPORT_EPS,
                   node_threshold: float = DEFAULT_NODE_THRESHOLD):
    names, table = snapshot_table(psi, eps, node_threshold)
    header = " ".join(names) + f"\nt={psi.time!r} shape={','.join(map(str, psi.grid.shape))}"
    np.savetxt(path, table, header=header, fmt="%.17g")


def read_columns(path: str | Path) -> dict[str, np.ndarray]:
    """Load a columnar text file written by this package into ``{name: column}``."""
    with open(path) as fh:
        names = fh.readline().lstrip("#").split()
    data = np.loadtxt(path, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(names)}


def read_snapshot(path: str | Path, grid: SpatialGrid, **kwargs) -> ManyBodyWavefunction:
    cols = read_columns(path)
    amps = (cols["re_psi"] + 1j * cols["im_psi"]).reshape(grid.shape)
    return ManyBodyWavefunction(grid, amps, **kwargs)


def read_mask(path: str | Path, grid: SpatialGrid, column: str = "support") -> np.ndarray:
    return read_columns(path)[column].reshape(grid.shape) > 0.5
