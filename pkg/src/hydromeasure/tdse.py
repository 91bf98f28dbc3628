"""Strang split-operator propagation of the many-body Schrödinger equation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import fft

from .errors import GridMismatchError, NumericalBlowupError
from .grid import ManyBodyWavefunction, SpatialGrid

logger = logging.getLogger(__name__)

PotentialFn = Callable[[tuple, float], np.ndarray]
BOUNDARIES = ("periodic", "hard_wall")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Kinetic terms ``-hbar^2 lap_k / 2 m_k`` plus a grid-sampled potential.

    ``potential`` is ``None`` (free), a fixed array, or ``f(coords, t)`` where
    ``coords`` are the broadcastable grid coordinate arrays.
    """
    masses: tuple[float, ...]
    potential: PotentialFn | np.ndarray | None = None
    time_dependent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if min(self.masses) <= 0:
            raise ValueError("masses must be positive")

    def sample(self, grid: SpatialGrid, t: float = 0.0) -> np.ndarray:
        if self.potential is None:
            return np.zeros(grid.shape)
        if callable(self.potential):
            v = self.potential(grid.coordinates(), t)
        else:
            v = self.potential
        v = np.broadcast_to(np.asarray(v, dtype=float), grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential has non-finite samples")
        return v


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    n_steps: int
    boundary: str = "periodic"

    def __post_init__(self):
        if not self.dt > 0 or not np.isfinite(self.dt * self.n_steps):
            raise ValueError("dt must be positive and dt*n_steps finite")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError("n_steps must be a non-negative integer")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")


# ---------------------------------------------------------------------------
# potential presets

def _coord_masses(masses, dim, n):
    masses = tuple(masses) if masses is not None else (1.0,)
    return [masses[min(c // dim, len(masses) - 1)] for c in range(n)]


def free() -> None:
    return None


def harmonic(omega: float, masses: Sequence[float] | None = None, dim: int = 1, center: float = 0.0) -> PotentialFn:
    def v(coords, t):
        ms = _coord_masses(masses, dim, len(coords))
        return sum(0.5 * m * omega ** 2 * (x - center) ** 2 for m, x in zip(ms, coords))
    return v


def double_well(a: float, b: float) -> PotentialFn:
    """``a (x^2 - b^2)^2`` in every coordinate."""
    return lambda coords, t: sum(a * (x ** 2 - b ** 2) ** 2 for x in coords)


def barrier(height: float, width: float, center: float = 0.0) -> PotentialFn:
    return lambda coords, t: sum(np.where(np.abs(x - center) < width / 2, height, 0.0) for x in coords)


_EXPR_NAMESPACE = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "cosh", "sinh", "arctan", "where", "pi", "minimum",
    "maximum", "heaviside")}


def expression(expr: str) -> PotentialFn:
    """Potential from a numpy expression in ``x0, x1, ...`` (``x``/``y`` alias the first two) and ``t``."""
    code = compile(expr, "<potential>", "eval")

    def v(coords, t):
        env = dict(_EXPR_NAMESPACE)
        env.update({f"x{i}": c for i, c in enumerate(coords)})
        env["x"] = coords[0]
        if len(coords) > 1:
            env["y"] = coords[1]
        env["t"] = t
        return eval(code, {"__builtins__": {}}, env)
    return v


def potential_from_config(cfg: dict | None, masses=None, dim: int = 1) -> PotentialFn | None:
    if not cfg:
        return None
    if "expression" in cfg:
        return expression(cfg["expression"])
    preset = cfg.get("preset", "free")
    if preset == "free":
        return None
    if preset == "harmonic":
        return harmonic(float(cfg["omega"]), masses, dim, float(cfg.get("center", 0.0)))
    if preset == "double_well":
        return double_well(float(cfg["a"]), float(cfg["b"]))
    if preset == "barrier":
        return barrier(float(cfg["height"]), float(cfg["width"]), float(cfg.get("center", 0.0)))
    raise ValueError(f"unknown potential preset {preset!r}")


# ---------------------------------------------------------------------------
# propagation

def stability_bound(grid: SpatialGrid, masses: Sequence[float], hbar: float = 1.0) -> float:
    """Advisory step ``0.1 m dx^2 / hbar``; the spectral step is stable for any dt."""
    ms = grid.coordinate_masses(masses)
    return float(min(0.1 * m * dx ** 2 / hbar for m, dx in zip(ms, grid.spacings)))


def kinetic_eigenvalues(grid: SpatialGrid, masses: Sequence[float], hbar: float, boundary: str) -> np.ndarray:
    """Kinetic energy of each transform mode, shaped like the grid."""
    ms = grid.coordinate_masses(masses)
    total = np.zeros(grid.shape)
    for c, (ax, m) in enumerate(zip(grid.axes, ms)):
        if boundary == "periodic":
            k = 2 * np.pi * np.fft.fftfreq(ax.n_points, d=ax.spacing)
        else:
            k = np.pi * np.arange(1, ax.n_points + 1) / ((ax.n_points + 1) * ax.spacing)
        shape = [1] * grid.n_coords
        shape[c] = ax.n_points
        total = total + (hbar ** 2 * k ** 2 / (2 * m)).reshape(shape)
    return total


def _forward(a, boundary):
    return fft.fftn(a, norm="ortho") if boundary == "periodic" else fft.dstn(a, type=1, norm="ortho")


def _backward(a, boundary):
    return fft.ifftn(a, norm="ortho") if boundary == "periodic" else fft.idstn(a, type=1, norm="ortho")


class _Stepper:
    """Caches the propagator factors for repeated steps of one (grid, H, dt)."""

    def __init__(self, psi: ManyBodyWavefunction, h: HamiltonianSpec, dt: float, boundary: str):
        if tuple(h.masses) != tuple(psi.masses):
            raise GridMismatchError("Hamiltonian masses differ from the wavefunction's")
        if boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        self.grid, self.h, self.dt, self.boundary, self.hbar = psi.grid, h, dt, boundary, psi.hbar
        self.kinetic = np.exp(-1j * dt / psi.hbar * kinetic_eigenvalues(psi.grid, h.masses, psi.hbar, boundary))
        self._half_kick = None if h.time_dependent else self._kick(0.0)

    def _kick(self, t_mid):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(-0.5j * self.dt / self.hbar * self.h.sample(self.grid, t_mid))

    def __call__(self, amps: np.ndarray, t: float) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            kick = self._half_kick if self._half_kick is not None else self._kick(t + self.dt / 2)
            out = kick * _backward(self.kinetic * _forward(kick * amps, self.boundary), self.boundary)
        if not np.all(np.isfinite(out)):
            raise NumericalBlowupError(f"non-finite amplitudes after step at t={t}")
        return out


def split_step(psi: ManyBodyWavefunction, h: HamiltonianSpec, dt: float,
               boundary: str = "periodic") -> ManyBodyWavefunction:
    """One Strang step: half potential kick, exact kinetic step in the transform basis, half kick.

    A negative ``dt`` steps backwards in time.
    """
    if dt == 0 or not np.isfinite(dt):
        raise ValueError("dt must be finite and nonzero")
    psi.require_normalized()
    step = _Stepper(psi, h, dt, boundary)
    return psi.replace(step(psi.amplitudes, psi.time), psi.time + dt)


def evolve(psi: ManyBodyWavefunction, h: HamiltonianSpec, cfg: EvolutionConfig,
           snapshot_every: int = 1) -> list[ManyBodyWavefunction]:
    """Apply ``cfg.n_steps`` split steps; snapshots at t=0, every ``snapshot_every`` steps and at the end."""
    if snapshot_every < 1:
        raise ValueError("snapshot_every must be >= 1")
    psi.require_normalized()
    bound = stability_bound(psi.grid, psi.masses, psi.hbar)
    if cfg.dt > bound:
        logger.warning("dt=%g exceeds the advisory accuracy bound %g", cfg.dt, bound)
    snapshots = [psi]
    if cfg.n_steps == 0:
        return snapshots
    step = _Stepper(psi, h, cfg.dt, cfg.boundary)
    amps = psi.amplitudes
    for n in range(1, cfg.n_steps + 1):
        amps = step(amps, psi.time + (n - 1) * cfg.dt)
        if n % snapshot_every == 0 or n == cfg.n_steps:
            snapshots.append(psi.replace(amps, psi.time + n * cfg.dt))
    return snapshots


def energy(psi: ManyBodyWavefunction, h: HamiltonianSpec, boundary: str = "periodic") -> float:
    """``<psi|H|psi> / <psi|psi>`` with the kinetic part evaluated spectrally."""
    phat = _forward(psi.amplitudes, boundary)
    kin = np.sum(np.abs(phat) ** 2 * kinetic_eigenvalues(psi.grid, h.masses, psi.hbar, boundary))
    pot = np.sum(psi.density * h.sample(psi.grid, psi.time))
    return float((kin + pot) / np.sum(psi.density))
