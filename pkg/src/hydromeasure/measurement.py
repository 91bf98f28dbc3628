"""Projective and Gaussian-Kraus measurements in the system + apparatus picture.

The joint grid is always ``S axes + E axes`` (plus ``E'`` axes for the
three-party scheme).  Observables are given by their eigenvalues and
eigenfunctions on the S grid; an apparatus by one pointer function per outcome
on the E grid.  Supports are thresholded densities (see ``grid.threshold_mask``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bipartite import Bipartition, purity, reduced_density_matrix, symmetrize_two_particle
from .errors import (BasisMismatchError, ConsistencyError, KrausNormalizationError, KrausPositivityError,
                     NormalizationError, ResolutionError, SpecError, ZeroProbabilityError)
from .grid import DEFAULT_SUPPORT_EPS, ManyBodyWavefunction, SpatialGrid, SupportMask, threshold_mask
from .integral import b_omega

GRAM_TOL = 1e-8
PROBABILITY_TOL = 1e-3  # allowed |B_{Ω^k}(1) - p_k| for a consistent verdict
BASIS_RESIDUAL_TOL = 1e-6

CONSISTENT, INCONSISTENT = "consistent", "inconsistent"


def _gram(funcs: np.ndarray, cell_volume: float) -> np.ndarray:
    flat = funcs.reshape(len(funcs), -1)
    return flat.conj() @ flat.T * cell_volume


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # (K, *S shape)
    grid: SpatialGrid

    def __post_init__(self):
        a = np.asarray(self.eigenvalues, dtype=float)
        funcs = np.asarray(self.eigenfunctions, dtype=complex)
        if funcs.shape[1:] != self.grid.shape or len(funcs) != len(a):
            raise SpecError("need one eigenfunction on the S grid per eigenvalue")
        if np.any(np.diff(a) <= 0):
            raise SpecError("eigenvalues must be distinct and sorted ascending")
        gram = _gram(funcs, self.grid.cell_volume)
        if np.max(np.abs(gram - np.eye(len(a)))) > GRAM_TOL:
            raise SpecError("eigenfunctions are not orthonormal under grid quadrature")
        object.__setattr__(self, "eigenvalues", a)
        object.__setattr__(self, "eigenfunctions", funcs)

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    def supports(self, eps: float) -> list[np.ndarray]:
        return [threshold_mask(np.abs(f) ** 2, eps) for f in self.eigenfunctions]


@dataclass(frozen=True, eq=False)
class ApparatusSpec:
    pointers: np.ndarray  # (K, *E shape)
    grid: SpatialGrid
    eps: float = DEFAULT_SUPPORT_EPS
    supports: tuple[SupportMask, ...] = field(init=False)
    orthonormal: bool = field(init=False)

    def __post_init__(self):
        ptr = np.asarray(self.pointers, dtype=complex)
        if ptr.shape[1:] != self.grid.shape:
            raise SpecError("pointer functions must live on the E grid")
        norms = np.sum(np.abs(ptr.reshape(len(ptr), -1)) ** 2, axis=1) * self.grid.cell_volume
        if np.max(np.abs(norms - 1)) > 1e-9:
            raise NormalizationError(f"pointer functions are not normalized: {norms}")
        object.__setattr__(self, "pointers", ptr)
        object.__setattr__(self, "supports", self.supports_at(self.eps))
        gram = _gram(ptr, self.grid.cell_volume)
        object.__setattr__(self, "orthonormal", bool(np.max(np.abs(gram - np.eye(len(ptr)))) <= GRAM_TOL))

    @property
    def K(self) -> int:
        return len(self.pointers)

    def supports_at(self, eps: float) -> tuple[SupportMask, ...]:
        return tuple(SupportMask(self.grid, threshold_mask(np.abs(f) ** 2, eps), eps) for f in self.pointers)

    def pointer_overlaps(self, eps: float | None = None) -> np.ndarray:
        sup = self.supports if eps is None else self.supports_at(eps)
        K = len(sup)
        out = np.zeros((K, K))
        for k in range(K):
            for l in range(K):
                if k != l:
                    out[k, l] = np.count_nonzero(sup[k].mask & sup[l].mask) * self.grid.cell_volume
        return out


@dataclass(frozen=True, eq=False)
class KrausSet:
    eigenvalues: np.ndarray
    sigma: np.ndarray
    C: np.ndarray
    W: np.ndarray  # (K, K, K): W[k] is diagonal in the eigenbasis

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    def gaussian(self) -> np.ndarray:
        """``G[k, h] = exp(-(a_k - a_h)^2 / (2 sigma_k))``."""
        a = self.eigenvalues
        return np.exp(-((a[:, None] - a[None, :]) ** 2) / (2 * self.sigma[:, None]))

    def completeness_residual(self) -> float:
        total = sum(w.conj().T @ w for w in self.W)
        return float(np.max(np.abs(total - np.eye(self.K))))


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    supports: tuple[SupportMask, ...]  # Ω^k (projective) or Θ^k (weak) on the joint grid
    overlaps: np.ndarray
    pointer_overlaps: np.ndarray
    probabilities: np.ndarray  # B_{Ω^k}(1)
    targets: np.ndarray  # p_k or p_k^w
    max_deviation: float
    verdict: str
    tolerance: float
    max_cell_mass: float = 0.0  # granularity of the greedy construction, 0 when none was used
    pieces: dict = field(default_factory=dict)  # named sub-supports (X^{S,h}, Ξ^h) and their residuals

    @property
    def consistent(self) -> bool:
        return self.verdict == CONSISTENT

    @property
    def residuals(self) -> np.ndarray:
        return self.probabilities - self.targets

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_deviation": self.max_deviation,
            "probabilities": self.probabilities.tolist(),
            "targets": self.targets.tolist(),
            "overlaps": self.overlaps.tolist(),
            "pointer_overlaps": self.pointer_overlaps.tolist(),
            "max_cell_mass": self.max_cell_mass,
            "residuals": self.residuals.tolist(),
        }


@dataclass(frozen=True, eq=False)
class BranchDensity:
    densities: np.ndarray  # (K, *joint shape) of |Ψ_k|^2
    normalizations: np.ndarray  # ∫_{Ω^k} |Ψ_k|^2
    max_identity_error: float  # max over k, x in Ω^k of ||psi|^2 - p_k |Ψ_k|^2|


@dataclass(frozen=True, eq=False)
class WeakMeasurement:
    initial: ManyBodyWavefunction
    finals: list[ManyBodyWavefunction]
    outcome_probabilities: np.ndarray  # from the joint-state measurement operator, on the grid
    report: ConsistencyReport
    part: Bipartition  # S | rest of the joint grid


# ---------------------------------------------------------------------------
# helpers

def joint_grid(*grids: SpatialGrid) -> SpatialGrid:
    out = grids[0]
    for g in grids[1:]:
        out = out.product(g)
    return out


def _joint(obs: ObservableSpec, app: ApparatusSpec) -> tuple[SpatialGrid, Bipartition]:
    grid = joint_grid(obs.grid, app.grid)
    return grid, Bipartition.split(obs.grid.n_coords, grid.n_coords)


def _check_probs(p: Sequence[float], K: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (K,):
        raise SpecError(f"expected {K} probabilities, got {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise NormalizationError(f"probabilities must be non-negative and sum to 1, got {p.sum()!r}")
    return p


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.multiply.outer(a, b)


def _check_statistics(statistics, obs, app):
    if statistics is None:
        return
    if statistics not in ("boson", "fermion"):
        raise SpecError("statistics must be None, 'boson' or 'fermion'")
    if obs.grid.n_coords != 1 or obs.grid != app.grid:
        raise SpecError("exchange statistics need S and E on the same single 1D axis")


def sample_outcome(probabilities: Sequence[float], seed: int) -> int:
    p = np.clip(np.asarray(probabilities, dtype=float), 0, None)
    return int(np.random.default_rng(seed).choice(len(p), p=p / p.sum()))


# ---------------------------------------------------------------------------
# projective measurement

def build_entangled_state(obs: ObservableSpec, app: ApparatusSpec, p: Sequence[float],
                          phases: Sequence[float] | None = None, statistics: str | None = None,
                          masses=None, hbar: float = 1.0) -> ManyBodyWavefunction:
    """``sum_k e^{i theta_k} sqrt(p_k) alpha_k(xi) phi_k(varsigma)``, normalized.

    With ``statistics`` set, each term is (anti)symmetrized over the two particles.
    """
    if obs.K != app.K:
        raise SpecError(f"observable has {obs.K} outcomes but the apparatus has {app.K} pointers")
    p = _check_probs(p, obs.K)
    phases = np.zeros(obs.K) if phases is None else np.asarray(phases, dtype=float)
    if phases.shape != (obs.K,):
        raise SpecError("need one phase per outcome")
    _check_statistics(statistics, obs, app)
    grid, _ = _joint(obs, app)
    amps = np.zeros(grid.shape, dtype=complex)
    for k in range(obs.K):
        if p[k] == 0:
            continue
        if statistics is None:
            term = _outer(obs.eigenfunctions[k], app.pointers[k])
        else:
            term = symmetrize_two_particle(obs.eigenfunctions[k], app.pointers[k], statistics,
                                           obs.grid.axes[0]).amplitudes
        amps += np.exp(1j * phases[k]) * np.sqrt(p[k]) * term
    return ManyBodyWavefunction(grid, amps, masses=masses, hbar=hbar).normalized()


def expansion_coefficients(psi: ManyBodyWavefunction, obs: ObservableSpec,
                           app: ApparatusSpec) -> tuple[np.ndarray, float]:
    """Coefficients ``c[k, mu]`` of ``psi`` on ``alpha_k x phi_mu`` and the norm of the remainder."""
    gS, gE = obs.grid, app.grid
    K = obs.K
    M = psi.amplitudes.reshape(gS.size, gE.size)
    alpha = obs.eigenfunctions.reshape(K, -1)
    phi = app.pointers.reshape(app.K, -1)
    btilde = alpha.conj() @ M * gS.cell_volume  # (K, nE)
    gram = _gram(app.pointers, gE.cell_volume)
    proj = btilde @ phi.conj().T * gE.cell_volume  # <phi_mu | btilde_k>
    # least squares keeps linearly dependent (e.g. identical) pointers usable; p_k does not depend on the split
    c = np.linalg.lstsq(gram.T, proj.T, rcond=None)[0].T
    rebuilt = alpha.T @ c @ phi
    residual = float(np.sqrt(np.sum(np.abs(M - rebuilt) ** 2) * gS.cell_volume * gE.cell_volume))
    return c, residual


def outcome_probabilities(psi: ManyBodyWavefunction, obs: ObservableSpec, app: ApparatusSpec) -> np.ndarray:
    """``p_k = || sum_mu c[k, mu] phi_mu ||^2``."""
    c, _ = expansion_coefficients(psi, obs, app)
    gram = _gram(app.pointers, app.grid.cell_volume)
    return np.real(np.einsum("km,mn,kn->k", c.conj(), gram, c))


def projective_measure(psi: ManyBodyWavefunction, obs: ObservableSpec, app: ApparatusSpec,
                       rng_seed: int) -> tuple[int, ManyBodyWavefunction, np.ndarray]:
    """Sample an outcome and collapse onto ``alpha_k x b_k`` with ``b_k ∝ sum_mu c[k, mu] phi_mu``."""
    c, residual = expansion_coefficients(psi, obs, app)
    if residual > BASIS_RESIDUAL_TOL:
        raise BasisMismatchError(f"state leaves a remainder of norm {residual:.3g} outside the measurement basis")
    gram = _gram(app.pointers, app.grid.cell_volume)
    p = np.real(np.einsum("km,mn,kn->k", c.conj(), gram, c))
    k = sample_outcome(p, rng_seed)
    b_k = np.tensordot(c[k], app.pointers, axes=1) / np.sqrt(p[k])
    collapsed = psi.replace(_outer(obs.eigenfunctions[k], b_k)).normalized()
    return k, collapsed, p


def _branch_supports(obs: ObservableSpec, app: ApparatusSpec, eps: float, statistics: str | None) -> list[np.ndarray]:
    grid, _ = _joint(obs, app)
    sup_S = obs.supports(eps)
    sup_E = [s.mask for s in app.supports_at(eps)]
    out = []
    for k in range(obs.K):
        m = _outer(sup_S[k], sup_E[k])
        if statistics is not None:
            m = m | m.T
        out.append(m)
    return out


def _overlap_matrix(masks: Sequence[np.ndarray], cell_volume: float) -> np.ndarray:
    K = len(masks)
    out = np.zeros((K, K))
    for k in range(K):
        for l in range(k + 1, K):
            out[k, l] = out[l, k] = np.count_nonzero(masks[k] & masks[l]) * cell_volume
    return out


def _report(grid, masks, psi, targets, pointer_overlaps, eps, tolerance, max_cell_mass=0.0, pieces=None):
    probs = np.array([b_omega(psi, m) for m in masks])
    overlaps = _overlap_matrix(masks, grid.cell_volume)
    targets = np.asarray(targets, dtype=float)
    dev = float(np.max(np.abs(probs - targets)))
    verdict = CONSISTENT if not np.any(overlaps > 0) and dev <= tolerance else INCONSISTENT
    return ConsistencyReport(tuple(SupportMask(grid, m, eps) for m in masks), overlaps, pointer_overlaps, probs,
                             targets, dev, verdict, tolerance, max_cell_mass, pieces or {})


def check_consistency(psi: ManyBodyWavefunction, obs: ObservableSpec, app: ApparatusSpec, eps: float | None = None,
                      statistics: str | None = None) -> ConsistencyReport:
    """Build ``Ω^k = supp(alpha_k) x Ω^{E,k}`` and test non-overlap and ``B_{Ω^k}(1) = p_k``."""
    eps = app.eps if eps is None else eps
    _check_statistics(statistics, obs, app)
    grid, _ = _joint(obs, app)
    masks = _branch_supports(obs, app, eps, statistics)
    if statistics is None:
        targets = outcome_probabilities(psi, obs, app)
    else:
        # p_k of a state built by build_entangled_state: weight of each symmetrized branch
        branches = [symmetrize_two_particle(obs.eigenfunctions[k], app.pointers[k], statistics,
                                            obs.grid.axes[0]).amplitudes for k in range(obs.K)]
        targets = np.array([abs(np.vdot(b, psi.amplitudes) * grid.cell_volume) ** 2 for b in branches])
    return _report(grid, masks, psi, targets, app.pointer_overlaps(eps), eps, PROBABILITY_TOL)


def expectation_via_functional(psi: ManyBodyWavefunction, obs: ObservableSpec, app: ApparatusSpec,
                               report: ConsistencyReport) -> float:
    """``sum_k B_{Ω^k}(f)`` with ``f = a_k`` on ``Ω^k``."""
    if not report.consistent:
        raise ConsistencyError("the functional route needs a consistent apparatus")
    f = np.zeros(psi.grid.shape)
    for a, sup in zip(obs.eigenvalues, report.supports):
        f[sup.mask] = a
    return float(sum(b_omega(psi, sup.mask, f) for sup in report.supports))


def branch_density(psi: ManyBodyWavefunction, obs: ObservableSpec, app: ApparatusSpec, report: ConsistencyReport,
                   statistics: str | None = None) -> BranchDensity:
    """``|Ψ_k|^2`` per outcome and the cellwise check ``|psi|^2 = p_k |Ψ_k|^2`` on ``Ω^k``."""
    if not report.consistent:
        raise ConsistencyError("branch densities are only defined for a consistent apparatus")
    grid, _ = _joint(obs, app)
    dens, norms, err = [], [], 0.0
    for k in range(obs.K):
        if statistics is None:
            d = _outer(np.abs(obs.eigenfunctions[k]) ** 2, np.abs(app.pointers[k]) ** 2)
        else:
            d = np.abs(symmetrize_two_particle(obs.eigenfunctions[k], app.pointers[k], statistics,
                                               obs.grid.axes[0]).amplitudes) ** 2
        mask = report.supports[k].mask
        dens.append(d)
        norms.append(float(np.sum(d[mask]) * grid.cell_volume))
        if mask.any():
            err = max(err, float(np.max(np.abs(psi.density[mask] - report.targets[k] * d[mask]))))
    return BranchDensity(np.array(dens), np.array(norms), err)


# ---------------------------------------------------------------------------
# Gaussian Kraus operators

def build_kraus(a: Sequence[float], sigma: Sequence[float] | float) -> KrausSet:
    """Gaussian Kraus set with ``C_k^2`` from the completeness system ``sum_k C_k^2 e^{-(a_k-a_h)^2/sigma_k} = 1``."""
    a = np.asarray(a, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), a.shape).copy()
    if len(np.unique(a)) != len(a):
        raise SpecError("Kraus eigenvalues must be distinct")
    if np.any(sigma <= 0):
        raise SpecError("Kraus widths must be positive")
    system = np.exp(-((a[None, :] - a[:, None]) ** 2) / sigma[None, :])  # [h, k]
    try:
        c2 = np.linalg.solve(system, np.ones(len(a)))
    except np.linalg.LinAlgError as exc:
        raise KrausNormalizationError(f"completeness system is singular: {exc}") from None
    if not np.all(np.isfinite(c2)) or np.max(np.abs(system @ c2 - 1)) > 1e-8:
        raise KrausNormalizationError("completeness system could not be solved accurately")
    if np.any(c2 <= 0):
        raise KrausPositivityError(f"completeness requires non-positive C_k^2 = {c2}")
    C = np.sqrt(c2)
    g = np.exp(-((a[:, None] - a[None, :]) ** 2) / (2 * sigma[:, None]))
    W = np.array([np.diag(C[k] * g[k]) for k in range(len(a))])
    return KrausSet(a, sigma, C, W)


def weak_probabilities(p: Sequence[float], kraus: KrausSet) -> np.ndarray:
    """``p_k^w = C_k^2 sum_h p_h e^{-(a_k-a_h)^2/sigma_k}``, cross-checked against ``<psi|W_k^† W_k|psi>``."""
    p = _check_probs(p, kraus.K)
    a = kraus.eigenvalues
    closed = kraus.C ** 2 * (np.exp(-((a[:, None] - a[None, :]) ** 2) / kraus.sigma[:, None]) @ p)
    routed = weak_probabilities_operator(p, kraus)
    if np.max(np.abs(closed - routed)) > 1e-12:
        raise KrausNormalizationError(f"closed-form and operator probabilities disagree: {closed} vs {routed}")
    return closed


def weak_probabilities_operator(p: Sequence[float], kraus: KrausSet) -> np.ndarray:
    psi = np.sqrt(np.asarray(p, dtype=float)).astype(complex)
    return np.array([np.real(np.vdot(w @ psi, w @ psi)) for w in kraus.W])


def weak_collapse_system(p: Sequence[float], kraus: KrausSet, k: int) -> np.ndarray:
    """System coefficients on ``|a_h>`` after outcome ``k``."""
    pw = weak_probabilities(p, kraus)
    if pw[k] <= 0:
        raise ZeroProbabilityError(f"outcome {k} has zero probability")
    return kraus.C[k] / np.sqrt(pw[k]) * kraus.gaussian()[k] * np.sqrt(np.asarray(p, dtype=float))


def greedy_subdomain(cell_mass: np.ndarray, parent: np.ndarray, target: float) -> tuple[np.ndarray, float]:
    """Take cells of ``parent`` by descending mass (ties: lowest flat index) until ``target`` is reached.

    Returns the chosen mask and the accumulated mass.
    """
    chosen = np.zeros(parent.shape, dtype=bool)
    if target <= 0:
        return chosen, 0.0
    idx = np.flatnonzero(parent)
    if idx.size == 0:
        raise ResolutionError(f"empty parent domain for target mass {target:.3g}")
    m = cell_mass.ravel()[idx]
    order = np.lexsort((idx, -m))
    cum = np.cumsum(m[order])
    n = min(int(np.searchsorted(cum, target, side="left")) + 1, idx.size)
    chosen.ravel()[idx[order[:n]]] = True
    return chosen, float(cum[n - 1])


def _check_kraus_matches(kraus: KrausSet, obs: ObservableSpec, app: ApparatusSpec):
    if kraus.K != obs.K or app.K != obs.K or not np.allclose(kraus.eigenvalues, obs.eigenvalues):
        raise SpecError("Kraus set, observable and apparatus must share the same outcomes")


def _project_side(amps: np.ndarray, funcs: np.ndarray, axis_sizes: tuple[int, int, int], which: int,
                  cell_volume: float) -> np.ndarray:
    """Contract one factor of a (before, side, after)-shaped array with ``conj(funcs)``."""
    return np.tensordot(amps.reshape(axis_sizes), funcs.reshape(len(funcs), -1).conj(), axes=([which], [1])) * cell_volume


def weak_variant_A(p: Sequence[float], kraus: KrausSet, obs: ObservableSpec, app: ApparatusSpec) -> WeakMeasurement:
    """Pointer ``k`` entangled with ``sum_h C_k e^{-(a_k-a_h)^2/2sigma_k} sqrt(p_h) |a_h>``; read out by ``I x P_k``."""
    _check_kraus_matches(kraus, obs, app)
    if not app.orthonormal:
        raise SpecError("variant A needs orthonormal pointer states")
    if np.any(app.pointer_overlaps() > 0):
        raise ConsistencyError("pointer supports overlap")
    pw = weak_probabilities(p, kraus)
    grid, part = _joint(obs, app)
    nS, nE = obs.grid.size, app.grid.size
    coef = kraus.C[:, None] * kraus.gaussian() * np.sqrt(np.asarray(p))[None, :]  # [k, h]
    alpha = obs.eigenfunctions.reshape(obs.K, nS)
    phi = app.pointers.reshape(app.K, nE)
    amps = np.einsum("kh,hs,ke->se", coef, alpha, phi)
    initial = ManyBodyWavefunction(grid, amps.reshape(grid.shape)).normalized()

    chi = _project_side(initial.amplitudes, app.pointers, (nS, nE, 1), 1, app.grid.cell_volume)[:, 0, :]  # (nS, K)
    probs = np.sum(np.abs(chi) ** 2, axis=0) * obs.grid.cell_volume
    finals = []
    for k in range(obs.K):
        if probs[k] <= 0:
            finals.append(None)
            continue
        finals.append(initial.replace(_outer(chi[:, k], phi[k]).reshape(grid.shape)).normalized())

    # Θ^k = (∪_h X^{S,h}) x Ω^{E,k}, X grown greedily over S cells inside the live D^{S,h}
    eps = app.eps
    sup_S = obs.supports(eps)
    weights = kraus.C[:, None] ** 2 * kraus.gaussian() ** 2 * np.asarray(p)[None, :]
    dens = initial.density.reshape(nS, nE)
    masks, pieces, unit = [], {}, 0.0
    for k in range(obs.K):
        ptr = app.supports[k].mask.ravel()
        slab = dens[:, ptr].sum(axis=1).reshape(obs.grid.shape) * grid.cell_volume
        parent = np.zeros(obs.grid.shape, dtype=bool)
        for h in range(obs.K):
            if weights[k, h] > 0:
                parent |= sup_S[h]
        X, _ = greedy_subdomain(slab, parent, pw[k])
        unit = max(unit, float(slab[parent].max()) if parent.any() else 0.0)
        pieces[k] = {h: X & sup_S[h] for h in range(obs.K)}
        masks.append(_outer(X, app.supports[k].mask))
    report = _report(grid, masks, initial, pw, app.pointer_overlaps(), eps, max(PROBABILITY_TOL, unit), unit, pieces)
    return WeakMeasurement(initial, finals, probs, report, part)


def weak_variant_B(p: Sequence[float], kraus: KrausSet, obs: ObservableSpec, app: ApparatusSpec) -> WeakMeasurement:
    """Projective state ``sum_h sqrt(p_h)|a_h>|b_h>`` read out by ``W_k x I``."""
    _check_kraus_matches(kraus, obs, app)
    initial = build_entangled_state(obs, app, p)
    projective = check_consistency(initial, obs, app)
    if not projective.consistent:
        raise ConsistencyError("variant B starts from a consistent projective apparatus")
    pw = weak_probabilities(p, kraus)
    grid, part = _joint(obs, app)
    nS, nE = obs.grid.size, app.grid.size
    alpha = obs.eigenfunctions.reshape(obs.K, nS)
    btilde = _project_side(initial.amplitudes, obs.eigenfunctions, (1, nS, nE), 1, obs.grid.cell_volume)[0]  # (nE, K)
    g = kraus.gaussian()
    probs, finals = np.zeros(obs.K), []
    for k in range(obs.K):
        out = np.einsum("h,hs,eh->se", kraus.C[k] * g[k], alpha, btilde)
        probs[k] = np.sum(np.abs(out) ** 2) * grid.cell_volume
        finals.append(initial.replace(out.reshape(grid.shape)).normalized() if probs[k] > 0 else None)

    # Θ^k = ∪_h Ξ^h with Ξ^h ⊆ Ω^h carrying mass p_h C_k^2 e^{-(a_k-a_h)^2/sigma_k}
    cell_mass = initial.density * grid.cell_volume
    omegas = [s.mask for s in projective.supports]
    weights = kraus.C[:, None] ** 2 * g ** 2 * np.asarray(p)[None, :]
    masks, pieces = [], {}
    unit = max(float(cell_mass[m].max()) for m in omegas if m.any())
    for k in range(obs.K):
        theta = np.zeros(grid.shape, dtype=bool)
        pieces[k] = {}
        for h in range(obs.K):
            xi, got = greedy_subdomain(cell_mass, omegas[h], weights[k, h])
            pieces[k][h] = {"mask": xi, "target": float(weights[k, h]), "achieved": got}
            theta |= xi
        masks.append(theta)
    report = _report(grid, masks, initial, pw, app.pointer_overlaps(), app.eps, max(PROBABILITY_TOL, unit), unit,
                     pieces)
    return WeakMeasurement(initial, finals, probs, report, part)


def generalized_SEE(p: Sequence[float], kraus: KrausSet, obs: ObservableSpec, app: ApparatusSpec,
                    app2: ApparatusSpec) -> WeakMeasurement:
    """Three-party state ``sum_{k,h} C_k e^{..} sqrt(p_h) |a_h>|b_h>|c_k>``, read out on the second apparatus."""
    _check_kraus_matches(kraus, obs, app)
    if app2.K != obs.K:
        raise SpecError("second apparatus needs one pointer per outcome")
    if np.any(app2.pointer_overlaps() > 0):
        raise ConsistencyError("supports of the second apparatus overlap")
    pw = weak_probabilities(p, kraus)
    grid = joint_grid(obs.grid, app.grid, app2.grid)
    nS, nE, nF = obs.grid.size, app.grid.size, app2.grid.size
    coef = kraus.C[:, None] * kraus.gaussian() * np.sqrt(np.asarray(p))[None, :]
    alpha = obs.eigenfunctions.reshape(obs.K, nS)
    phi = app.pointers.reshape(app.K, nE)
    cptr = app2.pointers.reshape(app2.K, nF)
    amps = np.einsum("kh,hs,he,kf->sef", coef, alpha, phi, cptr)
    initial = ManyBodyWavefunction(grid, amps.reshape(grid.shape)).normalized()

    rest = initial.amplitudes.reshape(nS * nE, nF)
    proj = rest @ cptr.conj().T * app2.grid.cell_volume  # (nS*nE, K)
    probs = np.sum(np.abs(proj) ** 2, axis=0) * obs.grid.cell_volume * app.grid.cell_volume
    finals = []
    for k in range(obs.K):
        if probs[k] <= 0:
            finals.append(None)
            continue
        finals.append(initial.replace(_outer(proj[:, k], cptr[k]).reshape(grid.shape)).normalized())

    everything = np.ones(nS * nE, dtype=bool)
    masks = [_outer(everything, s.mask.ravel()).reshape(grid.shape) for s in app2.supports]
    report = _report(grid, masks, initial, pw, app2.pointer_overlaps(), app2.eps, PROBABILITY_TOL)
    part = Bipartition.split(obs.grid.n_coords, grid.n_coords)
    return WeakMeasurement(initial, finals, probs, report, part)


def side_purity(psi: ManyBodyWavefunction, part: Bipartition, keep: str) -> float:
    return purity(reduced_density_matrix(psi, part, keep))
