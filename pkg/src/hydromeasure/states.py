"""Analytic single-coordinate states and helpers to combine them on a grid.

Gaussian widths are position standard deviations of the density:
``|psi|^2 ∝ exp(-(x - x0)^2 / (2 sigma0^2))``.
"""
from __future__ import annotations

from math import factorial, pi
from typing import Sequence

import numpy as np
from scipy.special import eval_hermite

from .grid import Axis, ManyBodyWavefunction, SpatialGrid


def gaussian(x: np.ndarray, x0: float = 0.0, sigma0: float = 1.0, k: float = 0.0) -> np.ndarray:
    norm = (2 * pi * sigma0 ** 2) ** -0.25
    return norm * np.exp(-((x - x0) ** 2) / (4 * sigma0 ** 2) + 1j * k * x)


def harmonic_eigenstate(x: np.ndarray, n: int, omega: float = 1.0, mass: float = 1.0, hbar: float = 1.0,
                        x0: float = 0.0) -> np.ndarray:
    """Hermite function ``n`` of the oscillator ``V = m omega^2 x^2 / 2``, centred at ``x0``."""
    alpha = mass * omega / hbar
    xi = np.sqrt(alpha) * (x - x0)
    norm = (alpha / pi) ** 0.25 / np.sqrt(2.0 ** n * factorial(n))
    return (norm * eval_hermite(n, xi) * np.exp(-xi ** 2 / 2)).astype(complex)


def plane_wave(axis: Axis, m: int) -> np.ndarray:
    """Periodic plane wave with ``m`` wavelengths across the FFT box."""
    L = axis.period
    return np.exp(2j * pi * m * (axis.points - axis.x_min) / L) / np.sqrt(L)


def plane_wave_k(axis: Axis, m: int) -> float:
    return 2 * pi * m / axis.period


def box_eigenstate(axis: Axis, j: int) -> np.ndarray:
    """Hard-wall eigenfunction ``j >= 1`` for walls one cell outside the axis ends."""
    L = (axis.n_points + 1) * axis.spacing
    return (np.sqrt(2 / L) * np.sin(pi * j * (axis.points - axis.x_min + axis.spacing) / L)).astype(complex)


def normalize_on_axis(values: np.ndarray, axis: Axis | SpatialGrid) -> np.ndarray:
    dv = axis.spacing if isinstance(axis, Axis) else axis.cell_volume
    values = np.asarray(values, dtype=complex)
    return values / np.sqrt(np.sum(np.abs(values) ** 2) * dv)


def outer(*factors: np.ndarray) -> np.ndarray:
    """Tensor product of per-coordinate arrays."""
    out = np.asarray(factors[0])
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def product_state(grid: SpatialGrid, factors: Sequence[np.ndarray], normalize: bool = True,
                  **kwargs) -> ManyBodyWavefunction:
    amps = outer(*factors)
    psi = ManyBodyWavefunction(grid, amps, **kwargs)
    return psi.normalized() if normalize else psi


def superpose(grid: SpatialGrid, terms: Sequence[tuple[complex, Sequence[np.ndarray]]], normalize: bool = True,
              **kwargs) -> ManyBodyWavefunction:
    """``sum_i c_i * outer(*factors_i)``."""
    amps = sum(c * outer(*fs) for c, fs in terms)
    psi = ManyBodyWavefunction(grid, amps, **kwargs)
    return psi.normalized() if normalize else psi


def free_gaussian_width(t: float, sigma0: float, mass: float = 1.0, hbar: float = 1.0) -> float:
    return sigma0 * np.sqrt(1 + (hbar * t / (2 * mass * sigma0 ** 2)) ** 2)
