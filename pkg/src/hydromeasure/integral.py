"""The trajectory-measure integral operator ``B_Ω(f) = ∫_Ω f R^2 dV`` on a snapshot."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bipartite import (DEFAULT_TRUNCATION, Bipartition, from_matrix, marginal_weights, reconstruct,
                        schmidt_decompose)
from .errors import GridMismatchError
from .grid import ManyBodyWavefunction, SpatialGrid


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """A region of configuration space: an explicit joint mask or a product ``Ω^S x Ω^E``."""
    kind: str
    mask: np.ndarray | None = None
    mask_S: np.ndarray | None = None
    mask_E: np.ndarray | None = None
    part: Bipartition | None = None

    @classmethod
    def full_grid_mask(cls, mask: np.ndarray) -> "RegionSpec":
        return cls("full_grid_mask", mask=np.asarray(mask, dtype=bool))

    @classmethod
    def product_region(cls, part: Bipartition, mask_S: np.ndarray, mask_E: np.ndarray) -> "RegionSpec":
        return cls("product_region", mask_S=np.asarray(mask_S, dtype=bool), mask_E=np.asarray(mask_E, dtype=bool),
                   part=part)

    @classmethod
    def everything(cls, grid: SpatialGrid) -> "RegionSpec":
        return cls.full_grid_mask(np.ones(grid.shape, dtype=bool))

    def joint_mask(self, grid: SpatialGrid) -> np.ndarray:
        if self.kind == "full_grid_mask":
            if self.mask.shape != grid.shape:
                raise GridMismatchError(f"mask shape {self.mask.shape} != grid shape {grid.shape}")
            return self.mask
        if self.kind != "product_region":
            raise ValueError(f"unknown region kind {self.kind!r}")
        gS, gE = self.part.grids(grid)
        if self.mask_S.shape != gS.shape or self.mask_E.shape != gE.shape:
            raise GridMismatchError("side masks do not match the bipartition grids")
        m = np.outer(self.mask_S.ravel(), self.mask_E.ravel())
        return from_matrix(m, grid, self.part)


def intervals_mask(axis_points: list[np.ndarray], intervals: list[list[tuple[float, float]]]) -> np.ndarray:
    """Product mask from per-axis lists of closed intervals (an empty list keeps the whole axis)."""
    masks = []
    for pts, ivs in zip(axis_points, intervals):
        if not ivs:
            masks.append(np.ones(pts.shape, dtype=bool))
            continue
        m = np.zeros(pts.shape, dtype=bool)
        for lo, hi in ivs:
            m |= (pts >= lo) & (pts <= hi)
        masks.append(m)
    out = masks[0]
    for m in masks[1:]:
        out = np.multiply.outer(out, m)
    return out


def b_omega(psi: ManyBodyWavefunction, region: RegionSpec | np.ndarray, f=None):
    """``sum_{cells in region} f |psi|^2 dV``; ``f=None`` means the constant 1.

    Returns a float unless ``f`` is complex.
    """
    mask = region.joint_mask(psi.grid) if isinstance(region, RegionSpec) else np.asarray(region, dtype=bool)
    if mask.shape != psi.grid.shape:
        raise GridMismatchError("region does not live on the wavefunction's grid")
    weight = psi.density[mask]
    if f is None:
        return float(np.sum(weight) * psi.grid.cell_volume)
    vals = np.broadcast_to(np.asarray(f), psi.grid.shape)[mask]
    total = np.sum(vals * weight) * psi.grid.cell_volume
    return complex(total) if np.iscomplexobj(total) else float(total)


def marginal_probability(psi: ManyBodyWavefunction, part: Bipartition, side: str, sub_mask: np.ndarray) -> float:
    """Probability that the ``side`` coordinates lie in ``sub_mask`` (the other side unrestricted)."""
    gS, gE = part.grids(psi.grid)
    if side == "S":
        region = RegionSpec.product_region(part, sub_mask, np.ones(gE.shape, dtype=bool))
    elif side == "E":
        region = RegionSpec.product_region(part, np.ones(gS.shape, dtype=bool), sub_mask)
    else:
        raise ValueError("side must be 'S' or 'E'")
    return b_omega(psi, region)


def marginal_probability_schmidt(psi: ManyBodyWavefunction, part: Bipartition, side: str, sub_mask: np.ndarray,
                                 tol: float = DEFAULT_TRUNCATION) -> float:
    """Same marginal through the Schmidt form ``sum_k p_k ∫_sub |mode_k|^2``."""
    return marginal_weights(schmidt_decompose(psi, part, tol), side, np.asarray(sub_mask, dtype=bool))


@dataclass(frozen=True)
class InequalityReport:
    joint: float
    marginal_S: float
    marginal_E: float
    holds: bool


def check_probability_inequalities(psi: ManyBodyWavefunction, part: Bipartition, mask_S: np.ndarray,
                                   mask_E: np.ndarray, slack: float = 1e-14) -> InequalityReport:
    """``P(joint | Ω^S x Ω^E) <= min(P(S | Ω^S), P(E | Ω^E))``."""
    joint = b_omega(psi, RegionSpec.product_region(part, mask_S, mask_E))
    pS = marginal_probability(psi, part, "S", mask_S)
    pE = marginal_probability(psi, part, "E", mask_E)
    return InequalityReport(joint, pS, pE, joint <= min(pS, pE) + slack)


def density_diagonal_equivalence(psi: ManyBodyWavefunction, part: Bipartition,
                                 tol: float = DEFAULT_TRUNCATION) -> float:
    """Max cellwise gap between ``<x|rho|x> dV`` (Schmidt route) and ``B_cell(1)`` (direct)."""
    rebuilt = reconstruct(schmidt_decompose(psi, part, tol))
    diag = np.abs(rebuilt.amplitudes) ** 2 * psi.grid.cell_volume
    direct = psi.density * psi.grid.cell_volume
    return float(np.max(np.abs(diag - direct)))

