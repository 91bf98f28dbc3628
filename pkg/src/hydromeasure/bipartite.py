"""S/E bipartitions, quadrature-weighted Schmidt decomposition and two-particle exchange."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateStateError, GridMismatchError, NullStateError
from .grid import Axis, ManyBodyWavefunction, SpatialGrid

DEFAULT_TRUNCATION = 1e-12


@dataclass(frozen=True)
class Bipartition:
    coords_S: tuple[int, ...]
    coords_E: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords_S", tuple(int(c) for c in self.coords_S))
        object.__setattr__(self, "coords_E", tuple(int(c) for c in self.coords_E))
        if not self.coords_S or not self.coords_E:
            raise ValueError("both sides of a bipartition must be non-empty")
        if set(self.coords_S) & set(self.coords_E):
            raise ValueError("bipartition sides overlap")

    @classmethod
    def split(cls, n_S: int, n_coords: int) -> "Bipartition":
        """First ``n_S`` coordinates on the S side, the rest on E."""
        return cls(tuple(range(n_S)), tuple(range(n_S, n_coords)))

    def validate(self, grid: SpatialGrid):
        if sorted(self.coords_S + self.coords_E) != list(range(grid.n_coords)):
            raise GridMismatchError(f"bipartition {self} does not cover the {grid.n_coords} grid coordinates")

    def grids(self, grid: SpatialGrid) -> tuple[SpatialGrid, SpatialGrid]:
        self.validate(grid)
        return grid.subgrid(self.coords_S), grid.subgrid(self.coords_E)

    @property
    def order(self) -> tuple[int, ...]:
        return self.coords_S + self.coords_E


def as_matrix(amplitudes: np.ndarray, grid: SpatialGrid, part: Bipartition) -> np.ndarray:
    """Reshape joint amplitudes into an (S index) x (E index) matrix."""
    gS, gE = part.grids(grid)
    return np.transpose(amplitudes, part.order).reshape(gS.size, gE.size)


def from_matrix(matrix: np.ndarray, grid: SpatialGrid, part: Bipartition) -> np.ndarray:
    gS, gE = part.grids(grid)
    arr = matrix.reshape(gS.shape + gE.shape)
    return np.transpose(arr, np.argsort(part.order))


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    p: np.ndarray
    phases: np.ndarray
    modes_S: np.ndarray  # (K, *S shape), orthonormal under S-grid quadrature
    modes_E: np.ndarray  # (K, *E shape)
    truncation_tol: float
    discarded: float  # 1 - sum(p), kept for auditing
    grid: SpatialGrid
    part: Bipartition
    masses: tuple[float, ...] | None = None
    hbar: float = 1.0
    time: float = 0.0

    @property
    def rank(self) -> int:
        return len(self.p)

    def report(self) -> list[dict]:
        gS, gE = self.part.grids(self.grid)
        out = []
        for k in range(self.rank):
            out.append({
                "k": k,
                "p": float(self.p[k]),
                "theta": float(self.phases[k]),
                "norm_S": float(np.sum(np.abs(self.modes_S[k]) ** 2) * gS.cell_volume),
                "norm_E": float(np.sum(np.abs(self.modes_E[k]) ** 2) * gE.cell_volume),
            })
        return out


def _fix_phase(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate each row so its largest-magnitude entry is real positive; return the removed phases."""
    pivot = np.argmax(np.abs(vecs), axis=1)
    alpha = np.angle(vecs[np.arange(len(vecs)), pivot])
    return vecs * np.exp(-1j * alpha)[:, None], alpha


def schmidt_decompose(psi: ManyBodyWavefunction, part: Bipartition,
                      tol: float = DEFAULT_TRUNCATION) -> SchmidtDecomposition:
    """Schmidt decomposition by SVD of the quadrature-scaled amplitude matrix.

    Terms with ``p_k < tol`` are dropped without renormalizing; the lost weight
    is kept in ``discarded``.  Each mode's largest component is made real
    positive and the removed phases are collected in ``phases``.
    """
    psi.require_normalized()
    gS, gE = part.grids(psi.grid)
    wS, wE = np.sqrt(gS.cell_volume), np.sqrt(gE.cell_volume)
    M = as_matrix(psi.amplitudes, psi.grid, part) * (wS * wE)
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    keep = s > np.sqrt(tol)
    if not keep.any():
        raise DegenerateStateError("no Schmidt coefficient above the truncation threshold")
    U, s, Vh = U[:, keep], s[keep], Vh[keep]
    modes_S, aS = _fix_phase(U.T)
    modes_E, aE = _fix_phase(Vh)
    p = s ** 2
    phases = np.mod(aS + aE + np.pi, 2 * np.pi) - np.pi
    return SchmidtDecomposition(
        p=p, phases=phases,
        modes_S=(modes_S / wS).reshape((len(p),) + gS.shape),
        modes_E=(modes_E / wE).reshape((len(p),) + gE.shape),
        truncation_tol=tol, discarded=float(1.0 - p.sum()), grid=psi.grid, part=part,
        masses=psi.masses, hbar=psi.hbar, time=psi.time)


def reconstruct(sd: SchmidtDecomposition) -> ManyBodyWavefunction:
    if sd.rank == 0:
        raise DegenerateStateError("empty Schmidt decomposition")
    K = sd.rank
    A = sd.modes_S.reshape(K, -1)
    B = sd.modes_E.reshape(K, -1)
    coef = np.exp(1j * sd.phases) * np.sqrt(sd.p)
    M = (A.T * coef) @ B
    return ManyBodyWavefunction(sd.grid, from_matrix(M, sd.grid, sd.part), sd.time, sd.masses, sd.hbar)


def reduced_density_matrix(psi: ManyBodyWavefunction | np.ndarray, part: Bipartition, keep: str = "S",
                           grid: SpatialGrid | None = None) -> np.ndarray:
    """Reduced density matrix on the kept side, in the quadrature-orthonormal grid basis (trace 1)."""
    if isinstance(psi, ManyBodyWavefunction):
        grid, amps = psi.grid, psi.amplitudes
    else:
        amps = np.asarray(psi)
    gS, gE = part.grids(grid)
    M = as_matrix(amps, grid, part) * np.sqrt(gS.cell_volume * gE.cell_volume)
    if keep == "S":
        return M @ M.conj().T
    if keep == "E":
        return M.T @ M.conj()
    raise ValueError("keep must be 'S' or 'E'")


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


# ---------------------------------------------------------------------------
# identical particles, N = 2

def symmetrize_two_particle(psi_S: np.ndarray | Callable, psi_E: np.ndarray | Callable, statistics: str,
                            axis: Axis, return_sigma: bool = False, **kwargs):
    """``(psi_S(x1) psi_E(x2) ± psi_S(x2) psi_E(x1)) / sigma`` on the grid ``axis x axis``.

    ``sigma`` is the quadrature norm of the combination, so for orthonormal
    inputs it is ``sqrt(2)``, and for identical bosons it is ``2``.
    """
    x = axis.points
    a = np.asarray(psi_S(x) if callable(psi_S) else psi_S, dtype=complex)
    b = np.asarray(psi_E(x) if callable(psi_E) else psi_E, dtype=complex)
    if a.shape != x.shape or b.shape != x.shape:
        raise GridMismatchError("single-particle functions must be sampled on the given axis")
    if statistics not in ("boson", "fermion"):
        raise ValueError("statistics must be 'boson' or 'fermion'")
    direct = np.multiply.outer(a, b)
    comb = direct + direct.T if statistics == "boson" else direct - direct.T
    sigma = float(np.sqrt(np.sum(np.abs(comb) ** 2) * axis.spacing ** 2))
    scale = np.sqrt(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2)) * axis.spacing
    if sigma <= 1e-7 * scale:
        raise NullStateError(f"{statistics} combination vanishes (sigma={sigma:.3g})")
    grid = SpatialGrid((axis, axis))
    psi = ManyBodyWavefunction(grid, comb / sigma, **kwargs)
    return (psi, sigma) if return_sigma else psi


def outer_modes(mode_S: np.ndarray, mode_E: np.ndarray) -> np.ndarray:
    return np.multiply.outer(mode_S, mode_E)


def marginal_weights(sd: SchmidtDecomposition, side: str, sub_mask: np.ndarray) -> float:
    """``sum_k p_k ∫_sub |mode_k|^2`` on one side of a Schmidt decomposition."""
    gS, gE = sd.part.grids(sd.grid)
    modes, g = (sd.modes_S, gS) if side == "S" else (sd.modes_E, gE)
    per_mode = np.array([np.sum(np.abs(m[sub_mask]) ** 2) for m in modes]) * g.cell_volume
    return float(np.dot(sd.p, per_mode))

