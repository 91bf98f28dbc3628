"""Scenario files: loading, static validation and the staged pipeline behind the CLI.

A scenario is a JSON object.  Minimal example::

    {"name": "free", "seed": 1,
     "grid": {"axes": [{"n": 256, "x_min": -20, "x_max": 20}]},
     "initial_state": {"factors": [{"preset": "gaussian", "x0": 0, "sigma0": 1}]},
     "evolution": {"dt": 0.001, "n_steps": 100, "snapshot_every": 50}}
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hydro, measurement, tdse
from .bipartite import Bipartition, purity, reconstruct, reduced_density_matrix, schmidt_decompose
from .grid import Axis, ManyBodyWavefunction, SpatialGrid, write_snapshot
from .integral import RegionSpec, b_omega, density_diagonal_equivalence
from .states import box_eigenstate, gaussian, harmonic_eigenstate, normalize_on_axis, plane_wave

log = logging.getLogger(__name__)

STAGES = ("evolve", "trajectories", "schmidt", "measure", "consistency", "weak")
STATE_PRESETS = ("gaussian", "harmonic_eigenstate", "plane_wave", "box_eigenstate")
POTENTIAL_PRESETS = ("free", "harmonic", "double_well", "barrier")


class ScenarioParseError(Exception):
    def __init__(self, path, line, col, msg):
        super().__init__(f"{path}:{line}:{col}: {msg}")
        self.line, self.col = line, col


@dataclass
class Scenario:
    name: str
    config: dict
    seed: int
    stages: tuple[str, ...]
    source: str = ""

    @property
    def output(self) -> str:
        return self.config.get("output", f"out_{self.name}")


def load_config(path: str | Path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(path, exc.lineno, exc.colno, exc.msg) from None
    if not isinstance(cfg, dict):
        raise ScenarioParseError(path, 1, 1, "top level must be an object")
    return cfg


# ---------------------------------------------------------------------------
# validation

def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def need(self, cond, where, msg):
        if not cond:
            self.errors.append(f"{where}: {msg}")
        return cond

    def number(self, d, key, where, positive=False, required=True):
        if key not in d:
            if required:
                self.errors.append(f"{where}.{key}: missing")
            return False
        ok = self.need(_num(d[key]), f"{where}.{key}", "must be a finite number")
        if ok and positive:
            ok = self.need(d[key] > 0, f"{where}.{key}", "must be > 0")
        return ok

    def axis(self, ax, where):
        if not self.need(isinstance(ax, dict), where, "must be an object"):
            return
        n_ok = self.need(isinstance(ax.get("n"), int) and ax.get("n", 0) >= 8, f"{where}.n", "integer >= 8 required")
        self.number(ax, "x_min", where)
        if "period" in ax:
            self.number(ax, "period", where, positive=True)
        elif self.number(ax, "x_max", where) and _num(ax.get("x_min")):
            self.need(ax["x_max"] > ax["x_min"], f"{where}.x_max", "must exceed x_min")
        return n_ok

    def factor(self, f, where):
        if not self.need(isinstance(f, dict), where, "must be an object"):
            return
        preset = f.get("preset")
        if not self.need(preset in STATE_PRESETS, f"{where}.preset", f"must be one of {STATE_PRESETS}"):
            return
        if preset == "gaussian":
            self.number(f, "sigma0", where, positive=True)
            for key in ("x0", "k"):
                self.number(f, key, where, required=False)
        elif preset == "harmonic_eigenstate":
            self.need(isinstance(f.get("n"), int) and f.get("n", -1) >= 0, f"{where}.n", "non-negative integer required")
            self.number(f, "omega", where, positive=True, required=False)
        elif preset == "plane_wave":
            self.need(isinstance(f.get("m"), int), f"{where}.m", "integer required")
        else:
            self.need(isinstance(f.get("j"), int) and f.get("j", 0) >= 1, f"{where}.j", "integer >= 1 required")

    def probabilities(self, p, K, where):
        if not self.need(isinstance(p, list) and all(_num(v) for v in p), where, "must be a list of numbers"):
            return
        self.need(len(p) == K, where, f"has {len(p)} entries, expected {K}")
        self.need(all(v >= 0 for v in p), where, "entries must be non-negative")
        self.need(abs(sum(p) - 1) <= 1e-9, where, f"must sum to 1 (sums to {sum(p)!r})")


def validate_config(cfg: dict) -> list[str]:
    """Every violated constraint in ``cfg``; empty when the scenario is runnable."""
    c = _Checker()
    c.need(isinstance(cfg.get("name", ""), str), "name", "must be a string")
    c.need(isinstance(cfg.get("seed", 0), int) and cfg.get("seed", 0) >= 0, "seed", "non-negative integer required")
    stages = cfg.get("stages", [])
    if c.need(isinstance(stages, list), "stages", "must be a list"):
        for s in stages:
            c.need(s in STAGES, "stages", f"unknown stage {s!r}")

    grid = cfg.get("grid")
    n_coords = 0
    if grid is not None:
        axes = grid.get("axes") if isinstance(grid, dict) else None
        if c.need(isinstance(axes, list) and axes, "grid.axes", "non-empty list required"):
            n_coords = len(axes)
            for i, ax in enumerate(axes):
                c.axis(ax, f"grid.axes[{i}]")
        dim = grid.get("dim", 1) if isinstance(grid, dict) else 1
        if c.need(dim in (1, 2), "grid.dim", "must be 1 or 2") and n_coords:
            c.need(n_coords % dim == 0, "grid.dim", "must divide the number of axes")

    particles = cfg.get("particles", {})
    masses = particles.get("masses", [1.0])
    c.need(isinstance(masses, list) and masses and all(_num(m) and m > 0 for m in masses), "particles.masses",
           "positive numbers required")
    if "hbar" in particles:
        c.number(particles, "hbar", "particles", positive=True)

    init = cfg.get("initial_state")
    if init is not None:
        c.need(grid is not None, "initial_state", "needs a grid")
        terms = init.get("terms") if "terms" in init else [{"coefficient": [1, 0], "factors": init.get("factors")}]
        for t, term in enumerate(terms):
            factors = term.get("factors")
            if c.need(isinstance(factors, list), f"initial_state.terms[{t}].factors", "list required"):
                c.need(len(factors) == n_coords, f"initial_state.terms[{t}].factors",
                       f"need one factor per grid axis ({n_coords})")
                for i, f in enumerate(factors):
                    c.factor(f, f"initial_state.terms[{t}].factors[{i}]")

    pot = cfg.get("hamiltonian", {}).get("potential")
    if pot is not None and "expression" not in pot:
        preset = pot.get("preset", "free")
        if c.need(preset in POTENTIAL_PRESETS, "hamiltonian.potential.preset", f"must be one of {POTENTIAL_PRESETS}"):
            required = {"harmonic": ["omega"], "double_well": ["a", "b"], "barrier": ["height", "width"]}
            for key in required.get(preset, []):
                c.number(pot, key, "hamiltonian.potential")

    evo = cfg.get("evolution")
    if evo is not None:
        c.need(init is not None, "evolution", "needs an initial_state")
        c.number(evo, "dt", "evolution", positive=True)
        c.need(isinstance(evo.get("n_steps"), int) and evo.get("n_steps", -1) >= 0, "evolution.n_steps",
               "non-negative integer required")
        c.need(evo.get("boundary", "periodic") in tdse.BOUNDARIES, "evolution.boundary",
               f"must be one of {tdse.BOUNDARIES}")
        se = evo.get("snapshot_every", 1)
        c.need(isinstance(se, int) and se >= 1, "evolution.snapshot_every", "positive integer required")

    traj = cfg.get("trajectories")
    if traj is not None:
        c.need(evo is not None, "trajectories", "needs an evolution section")
        c.need(isinstance(traj.get("count", 100), int) and traj.get("count", 100) >= 1, "trajectories.count",
               "positive integer required")
        c.need(traj.get("mode", "density") in ("density", "uniform", "cells"), "trajectories.mode",
               "must be density, uniform or cells")

    bip = cfg.get("bipartition")
    if bip is not None:
        c.need(isinstance(bip.get("n_S"), int) and 1 <= bip.get("n_S", 0) < max(n_coords, 1),
               "bipartition.n_S", f"must lie in [1, {n_coords - 1}]")

    meas = cfg.get("measurement")
    if meas is not None:
        _validate_measurement(c, meas)

    for s in stages if isinstance(stages, list) else []:
        section = {"evolve": "evolution", "trajectories": "trajectories", "schmidt": "bipartition",
                   "measure": "measurement", "consistency": "measurement", "weak": "measurement"}.get(s)
        if section:
            c.need(section in cfg, "stages", f"stage {s!r} needs a {section!r} section")
    if isinstance(stages, list) and "weak" in stages and meas is not None:
        c.need("kraus" in meas, "measurement.kraus", "required by the weak stage")
    return c.errors


def _validate_measurement(c: _Checker, meas: dict):
    system, app = meas.get("system"), meas.get("apparatus")
    K = None
    if c.need(isinstance(system, dict), "measurement.system", "object required"):
        c.axis(system.get("axis"), "measurement.system.axis")
        a = system.get("eigenvalues")
        if c.need(isinstance(a, list) and a and all(_num(v) for v in a), "measurement.system.eigenvalues",
                  "non-empty list of numbers required"):
            K = len(a)
            c.need(all(x < y for x, y in zip(a, a[1:])), "measurement.system.eigenvalues",
                   "must be distinct and ascending")
        funcs = system.get("eigenfunctions", [])
        c.need(K is None or len(funcs) == K, "measurement.system.eigenfunctions", "need one per eigenvalue")
        for i, f in enumerate(funcs):
            c.factor(f, f"measurement.system.eigenfunctions[{i}]")
    for key in ("apparatus", "apparatus2"):
        sub = meas.get(key)
        if sub is None:
            c.need(key == "apparatus2", f"measurement.{key}", "object required")
            continue
        c.axis(sub.get("axis"), f"measurement.{key}.axis")
        ptrs = sub.get("pointers", [])
        c.need(K is None or len(ptrs) == K, f"measurement.{key}.pointers", "need one pointer per eigenvalue")
        for i, f in enumerate(ptrs):
            c.factor(f, f"measurement.{key}.pointers[{i}]")
        if "eps" in sub:
            c.number(sub, "eps", f"measurement.{key}", positive=True)
    if K is not None:
        c.probabilities(meas.get("p"), K, "measurement.p")
        if "phases" in meas:
            ph = meas["phases"]
            c.need(isinstance(ph, list) and len(ph) == K and all(_num(v) for v in ph), "measurement.phases",
                   f"list of {K} numbers required")
    kraus = meas.get("kraus")
    if kraus is not None:
        sigma = kraus.get("sigma")
        sigma = sigma if isinstance(sigma, list) else [sigma]
        if c.need(all(_num(s) for s in sigma), "measurement.kraus.sigma", "numbers required"):
            c.need(all(s > 0 for s in sigma), "measurement.kraus.sigma", "widths must be > 0")
            c.need(len(sigma) in (1, K or 1), "measurement.kraus.sigma", "one width or one per eigenvalue")


def default_stages(cfg: dict) -> list[str]:
    """Every stage whose configuration section is present, in pipeline order."""
    meas = cfg.get("measurement") or {}
    present = {"evolve": "evolution" in cfg, "trajectories": "trajectories" in cfg, "schmidt": "bipartition" in cfg,
               "measure": bool(meas), "consistency": bool(meas), "weak": "kraus" in meas}
    return [s for s in STAGES if present[s]]


def load_scenario(path: str | Path, seed: int | None = None) -> tuple[Scenario, list[str]]:
    cfg = load_config(path)
    errors = validate_config(cfg)
    stages = tuple(cfg.get("stages") or default_stages(cfg))
    if seed is None:
        seed = cfg.get("seed", 0) if isinstance(cfg.get("seed", 0), int) else 0
    return Scenario(str(cfg.get("name", Path(path).stem)), cfg, int(seed), stages, str(path)), errors


# ---------------------------------------------------------------------------
# builders

def build_axis(ax: dict) -> Axis:
    if "period" in ax:
        return Axis.periodic(int(ax["n"]), float(ax["x_min"]), float(ax["period"]))
    return Axis(int(ax["n"]), float(ax["x_min"]), float(ax["x_max"]))


def build_factor(f: dict, axis: Axis) -> np.ndarray:
    x = axis.points
    preset = f["preset"]
    if preset == "gaussian":
        v = gaussian(x, float(f.get("x0", 0.0)), float(f["sigma0"]), float(f.get("k", 0.0)))
    elif preset == "harmonic_eigenstate":
        v = harmonic_eigenstate(x, int(f["n"]), float(f.get("omega", 1.0)), float(f.get("mass", 1.0)),
                                float(f.get("hbar", 1.0)), float(f.get("x0", 0.0)))
    elif preset == "plane_wave":
        v = plane_wave(axis, int(f["m"]))
    else:
        v = box_eigenstate(axis, int(f["j"]))
    return normalize_on_axis(v, axis)


def build_grid(cfg: dict) -> SpatialGrid:
    g = cfg["grid"]
    return SpatialGrid(tuple(build_axis(ax) for ax in g["axes"]), int(g.get("dim", 1)))


def build_initial_state(cfg: dict, grid: SpatialGrid) -> ManyBodyWavefunction:
    init = cfg["initial_state"]
    terms = init.get("terms") or [{"coefficient": [1.0, 0.0], "factors": init["factors"]}]
    amps = np.zeros(grid.shape, dtype=complex)
    for term in terms:
        coef = term.get("coefficient", [1.0, 0.0])
        coef = complex(coef[0], coef[1]) if isinstance(coef, list) else complex(coef)
        vecs = [build_factor(f, ax) for f, ax in zip(term["factors"], grid.axes)]
        prod = vecs[0]
        for v in vecs[1:]:
            prod = np.multiply.outer(prod, v)
        amps += coef * prod
    p = cfg.get("particles", {})
    return ManyBodyWavefunction(grid, amps, masses=p.get("masses"), hbar=float(p.get("hbar", 1.0))).normalized()


def build_measurement(meas: dict):
    sys_axis = build_axis(meas["system"]["axis"])
    gS = SpatialGrid((sys_axis,))
    obs = measurement.ObservableSpec(np.array(meas["system"]["eigenvalues"], dtype=float),
                                     np.array([build_factor(f, sys_axis) for f in meas["system"]["eigenfunctions"]]),
                                     gS)
    apps = []
    for key in ("apparatus", "apparatus2"):
        sub = meas.get(key)
        if sub is None:
            apps.append(None)
            continue
        ax = build_axis(sub["axis"])
        apps.append(measurement.ApparatusSpec(np.array([build_factor(f, ax) for f in sub["pointers"]]),
                                              SpatialGrid((ax,)), float(sub.get("eps", 1e-6))))
    return obs, apps[0], apps[1]


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class RunResult:
    metrics: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def put(self, key: str, value, source: str):
        self.metrics[key] = value
        self.sources[key] = source


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage!r}: {type(exc).__name__}: {exc}")
        self.stage = stage


class Pipeline:
    def __init__(self, scenario: Scenario, out_dir: Path):
        self.sc = scenario
        self.cfg = scenario.config
        self.out = out_dir
        self.res = RunResult()
        self._snapshots = None

    # evolve ----------------------------------------------------------------
    def snapshots(self):
        if self._snapshots is None:
            grid = build_grid(self.cfg)
            psi0 = build_initial_state(self.cfg, grid)
            evo = self.cfg["evolution"]
            masses = psi0.masses
            h = tdse.HamiltonianSpec(masses, tdse.potential_from_config(self.cfg.get("hamiltonian", {}).get("potential"),
                                                                         masses, grid.dim))
            ec = tdse.EvolutionConfig(float(evo["dt"]), int(evo["n_steps"]), evo.get("boundary", "periodic"))
            snaps = tdse.evolve(psi0, h, ec, int(evo.get("snapshot_every", 1)))
            self._snapshots = (snaps, h, ec)
        return self._snapshots

    def stage_evolve(self):
        snaps, h, ec = self.snapshots()
        snap_dir = self.out / "snapshots"
        snap_dir.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(snaps):
            write_snapshot(snap_dir / f"snapshot_{i:04d}.txt", s)
        norms = np.array([s.norm_squared() for s in snaps])
        e0, e1 = tdse.energy(snaps[0], h, ec.boundary), tdse.energy(snaps[-1], h, ec.boundary)
        r = self.res
        r.put("evolve.n_snapshots", len(snaps), "tdse.evolve")
        r.put("evolve.norm_drift", float(np.max(np.abs(norms - norms[0]))), "tdse.evolve")
        r.put("evolve.energy_initial", e0, "tdse.energy")
        r.put("evolve.energy_drift_rel", abs(e1 - e0) / max(abs(e0), 1e-300), "tdse.energy")
        r.put("evolve.final_time", snaps[-1].time, "tdse.evolve")

    # trajectories ------------------------------------------------------------
    def stage_trajectories(self):
        snaps, _, ec = self.snapshots()
        t = self.cfg["trajectories"]
        spec = hydro.SampleSpec(int(t.get("count", 100)), t.get("mode", "density"), int(t.get("seed", self.sc.seed)),
                                float(t.get("eps", 1e-6)))
        ens = hydro.integrate_trajectories(snaps, spec)
        self.out.mkdir(parents=True, exist_ok=True)
        hydro.write_trajectories(self.out / "trajectories.txt", ens)
        r = self.res
        r.put("trajectories.count", len(ens), "hydro.integrate_trajectories")
        r.put("trajectories.ok_fraction", float(np.mean(ens.status == "ok")), "hydro.integrate_trajectories")
        rep = hydro.check_no_crossing(ens)
        if rep.order_preserved is not None:
            r.put("trajectories.order_preserved", int(rep.order_preserved), "hydro.check_no_crossing")
        r.put("trajectories.crossing_flagged", int(rep.flagged), "hydro.check_no_crossing")
        r.put("trajectories.min_distance", float(rep.min_distance), "hydro.check_no_crossing")
        if snaps[0].grid.n_coords == 1:
            jd = hydro.current_density(snaps[-1])
            r.put("hydro.current_discrepancy", jd.max_discrepancy, "hydro.current_density")
            if len(snaps) >= 3 and int(self.cfg["evolution"].get("snapshot_every", 1)) == 1:
                r.put("hydro.continuity_residual", hydro.continuity_residual(snaps[-3:], ec.dt),
                      "hydro.continuity_residual")

    # schmidt -----------------------------------------------------------------
    def stage_schmidt(self):
        grid = build_grid(self.cfg)
        psi = build_initial_state(self.cfg, grid)
        if "evolution" in self.cfg and self.cfg["bipartition"].get("use_final", False):
            psi = self.snapshots()[0][-1]
        part = Bipartition.split(int(self.cfg["bipartition"]["n_S"]), grid.n_coords)
        sd = schmidt_decompose(psi, part, float(self.cfg["bipartition"].get("tol", 1e-12)))
        err = float(np.max(np.abs(reconstruct(sd).amplitudes - psi.amplitudes)))
        r = self.res
        r.put("schmidt.rank", sd.rank, "bipartite.schmidt_decompose")
        for k, p in enumerate(sd.p):
            r.put(f"schmidt.p_{k}", float(p), "bipartite.schmidt_decompose")
        r.put("schmidt.reconstruction_error", err, "bipartite.reconstruct")
        r.put("schmidt.purity_S", purity(reduced_density_matrix(psi, part, "S")), "bipartite.reduced_density_matrix")
        r.put("integral.b_full", b_omega(psi, RegionSpec.everything(grid)), "integral.b_omega")
        r.put("integral.diagonal_equivalence", density_diagonal_equivalence(psi, part),
              "integral.density_diagonal_equivalence")
        self.res.summary["schmidt"] = sd.report()

    # measurement -------------------------------------------------------------
    def _measurement(self):
        meas = self.cfg["measurement"]
        obs, app, app2 = build_measurement(meas)
        return meas, obs, app, app2

    def stage_measure(self):
        meas, obs, app, _ = self._measurement()
        psi = measurement.build_entangled_state(obs, app, meas["p"], meas.get("phases"))
        seed = int(meas.get("seed", self.sc.seed))
        k, _, p = measurement.projective_measure(psi, obs, app, seed)
        r = self.res
        r.put("measure.outcome", k, "measurement.projective_measure")
        r.put("measure.eigenvalue", float(obs.eigenvalues[k]), "measurement.projective_measure")
        for i, v in enumerate(p):
            r.put(f"measure.p_{i}", float(v), "measurement.projective_measure")
        r.summary["measure"] = {"seed": seed, "outcome": k, "a_k": float(obs.eigenvalues[k]), "p": p.tolist()}

    def stage_consistency(self):
        meas, obs, app, _ = self._measurement()
        psi = measurement.build_entangled_state(obs, app, meas["p"], meas.get("phases"))
        rep = measurement.check_consistency(psi, obs, app)
        r = self.res
        r.put("consistency.consistent", int(rep.consistent), "measurement.check_consistency")
        r.put("consistency.max_deviation", rep.max_deviation, "measurement.check_consistency")
        r.put("consistency.max_overlap", float(rep.overlaps.max()), "measurement.check_consistency")
        summary = rep.summary()
        if rep.consistent:
            value = measurement.expectation_via_functional(psi, obs, app, rep)
            r.put("consistency.expectation_functional", value, "measurement.expectation_via_functional")
            r.put("consistency.expectation_operator", float(np.dot(obs.eigenvalues, rep.targets)),
                  "measurement.outcome_probabilities")
            bd = measurement.branch_density(psi, obs, app, rep)
            r.put("consistency.branch_identity_error", bd.max_identity_error, "measurement.branch_density")
        r.summary["consistency"] = summary

    def stage_weak(self):
        meas, obs, app, app2 = self._measurement()
        kraus = measurement.build_kraus(obs.eigenvalues, meas["kraus"]["sigma"])
        p = meas["p"]
        pw = measurement.weak_probabilities(p, kraus)
        r = self.res
        r.put("weak.completeness_residual", kraus.completeness_residual(), "measurement.build_kraus")
        for k, v in enumerate(pw):
            r.put(f"weak.p_w_{k}", float(v), "measurement.weak_probabilities")
        A = measurement.weak_variant_A(p, kraus, obs, app)
        B = measurement.weak_variant_B(p, kraus, obs, app)
        r.put("weak.A_B_probability_gap", float(np.max(np.abs(A.outcome_probabilities - B.outcome_probabilities))),
              "measurement.weak_variant_A")
        summary = {"p_w": pw.tolist(), "A": A.report.summary(), "B": B.report.summary()}
        for name, wm in (("A", A), ("B", B)):
            r.put(f"weak.{name}.consistent", int(wm.report.consistent), f"measurement.weak_variant_{name}")
            r.put(f"weak.{name}.max_residual", float(np.max(np.abs(wm.report.residuals))),
                  f"measurement.weak_variant_{name}")
            for k, fin in enumerate(wm.finals):
                if fin is not None:
                    r.put(f"weak.{name}.purity_E_{k}", measurement.side_purity(fin, wm.part, "E"),
                          "measurement.side_purity")
        if app2 is not None:
            G = measurement.generalized_SEE(p, kraus, obs, app, app2)
            r.put("weak.SEE.consistent", int(G.report.consistent), "measurement.generalized_SEE")
            part_F = Bipartition.split(2, 3)
            for k, fin in enumerate(G.finals):
                if fin is not None:
                    r.put(f"weak.SEE.purity_E2_{k}", measurement.side_purity(fin, part_F, "E"),
                          "measurement.side_purity")
            summary["SEE"] = G.report.summary()
        r.summary["weak"] = summary

    def run(self, stages):
        for s in stages:
            log.info("running stage %s", s)
            try:
                getattr(self, f"stage_{s}")()
            except Exception as exc:  # re-raised with stage context
                raise StageError(s, exc) from exc
        return self.res


def format_metrics(metrics: dict) -> str:
    lines = []
    for key in sorted(metrics):
        v = metrics[key]
        lines.append(f"{key} {v!r}" if isinstance(v, int) else f"{key} {float(v)!r}")
    return "\n".join(lines) + "\n"


def write_outputs(scenario: Scenario, res: RunResult, out_dir: Path, stages):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.txt").write_text(format_metrics(res.metrics))
    summary = {"name": scenario.name, "seed": scenario.seed, "stages": list(stages), "sources": res.sources,
               "metrics": res.metrics, **res.summary}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")


def run_scenario(path: str | Path, out: str | Path | None = None, seed: int | None = None,
                 stages: tuple[str, ...] | None = None) -> RunResult:
    """Validate and run a scenario file; raises on validation or numerical failure."""
    scenario, errors = load_scenario(path, seed)
    if errors:
        raise ValueError("invalid scenario:\n  " + "\n  ".join(errors))
    out_dir = Path(out) if out is not None else Path(scenario.output)
    stages = stages or scenario.stages
    res = Pipeline(scenario, out_dir).run(stages)
    write_outputs(scenario, res, out_dir, stages)
    return res
