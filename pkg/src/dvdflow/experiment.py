"""Time loops, convergence studies and output for configured experiments."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, steps_for
from .dvd import DvdStepper, StepReport
from .grid import UniformGrid, read_snapshot, write_snapshot
from .model import FreeEnergy
from .relaxed import LinearSolver, RelaxedStepper, StabilizationOperator, modified_energy
from .solver import LINEAR_KRYLOV, NEWTON_KRYLOV, ConvergenceError, KrylovConfig, NewtonConfig
from .tableau import BUILTIN_NAMES, builtin_tableau, read_tableau

__all__ = [
    "SolverFailure",
    "TimeSeriesRow",
    "RunResult",
    "ConvergenceTable",
    "RadiusBench",
    "CSV_HEADER",
    "make_grid",
    "make_free_energy",
    "initial_condition",
    "Integrator",
    "run",
    "convergence_study",
    "radius",
    "radius_bench",
    "emit_csv",
    "emit_snapshot",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("step", "time", "energy", "modified_energy", "mass", "newton_iters", "gmres_iters", "radius")


class SolverFailure(RuntimeError):
    """A time step could not be completed."""


@dataclass(frozen=True)
class TimeSeriesRow:
    step: int
    time: float
    energy: float
    modified_energy: float
    mass: float
    newton_iters: int
    gmres_iters: int
    radius: float | None = None


@dataclass
class RunResult:
    rows: list
    phi: np.ndarray
    grid: UniformGrid
    linear_solves: int = 0


def make_grid(cfg: ExperimentConfig) -> UniformGrid:
    return UniformGrid(cfg.grid_n, cfg.grid_length, cfg.bc, cfg.grid_origin)


def make_free_energy(cfg: ExperimentConfig, grid: UniformGrid) -> FreeEnergy:
    return FreeEnergy(gamma=cfg.gamma, epsilon=cfg.epsilon, beta=cfg.beta, c0=cfg.c0_value,
                      domain_measure=grid.volume)


def initial_condition(cfg: ExperimentConfig, grid: UniformGrid) -> np.ndarray:
    """phi(x, 0) at the cell centres.

    ``sine``: amplitude * prod_d sin(x_d); ``sine2d`` is the same on a 2D grid;
    ``circle``: +1 where |x - center| < radius, -1 elsewhere; ``random``:
    uniform on [low, high] from ``numpy.random.default_rng(seed)``;
    ``constant``: ``value`` everywhere; ``file``: a saved snapshot.
    """
    kind = cfg.init_kind
    xs = grid.centers()
    if kind in ("sine", "sine2d"):
        out = np.full(grid.shape, float(cfg.init_amplitude))
        for x in xs:
            out = out * np.sin(x)
        return out
    if kind == "circle":
        if grid.dim != 2:
            raise ValueError("circle initial data needs a 2D grid")
        cx, cy = cfg.init_center
        r2 = (xs[0] - cx) ** 2 + (xs[1] - cy) ** 2
        return np.where(r2 < cfg.init_radius**2, 1.0, -1.0)
    if kind == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(cfg.init_low, cfg.init_high, size=grid.shape)
    if kind == "constant":
        return np.full(grid.shape, float(cfg.init_value))
    if kind == "file":
        values, g2, _ = read_snapshot(cfg.init_path, grid.bc)
        if g2.n != grid.n:
            raise ValueError(f"snapshot grid {g2.n} does not match configured grid {grid.n}")
        return values
    raise ValueError(f"unknown initial condition {kind!r}")


class Integrator:
    """Uniform driver over DVD (implicit) and relaxed (linear) schemes."""

    def __init__(self, cfg: ExperimentConfig, grid: UniformGrid | None = None):
        self.cfg = cfg
        self.grid = grid or make_grid(cfg)
        self.fe = make_free_energy(cfg, self.grid)
        self.kind = cfg.kind
        self._state = None
        self._phi = None
        if cfg.is_dvd:
            tab = (builtin_tableau(cfg.scheme) if cfg.scheme in BUILTIN_NAMES
                   else read_tableau(cfg.scheme[len("file:"):]))
            kdef = NEWTON_KRYLOV
            ncfg = NewtonConfig(eps_rel=cfg.newton_eps_rel, eps_abs=cfg.newton_eps_abs,
                                max_iters=cfg.newton_max_iters)
            self.stepper = DvdStepper(self.grid, tab, self.kind, self.fe, ncfg, self._krylov(kdef),
                                      cfg.precond_block, cfg.precond_overlap)
        else:
            lhat = StabilizationOperator(cfg.stab_a0, cfg.stab_a1, cfg.stab_a2)
            solver = LinearSolver(self._krylov(LINEAR_KRYLOV))
            self.stepper = RelaxedStepper(self.grid, self.fe, self.kind, cfg.relaxed_scheme,
                                          m=cfg.aux_m, lhat=lhat, solver=solver)

    def _krylov(self, default: KrylovConfig) -> KrylovConfig:
        c = self.cfg
        return KrylovConfig(
            xi_rel=default.xi_rel if c.krylov_xi_rel is None else c.krylov_xi_rel,
            xi_abs=default.xi_abs if c.krylov_xi_abs is None else c.krylov_xi_abs,
            restart=c.krylov_restart,
            max_iters=c.krylov_max_iters,
        )

    @property
    def is_dvd(self) -> bool:
        return isinstance(self.stepper, DvdStepper)

    def start(self, phi0) -> None:
        phi0 = self.grid.check_field(phi0)
        if self.is_dvd:
            self._phi = phi0.copy()
        else:
            self._state = self.stepper.initial(phi0)

    @property
    def phi(self) -> np.ndarray:
        return self._phi if self.is_dvd else self._state.phi_curr

    def modified_energy(self) -> float:
        if self.is_dvd:
            return float(self.grid.discrete_energy(self._phi, self.fe))
        return modified_energy(self.grid, self._state.phi_curr, self._state.aux, self.fe)

    def advance(self, h: float) -> StepReport:
        try:
            if self.is_dvd:
                self._phi, rep = self.stepper.step(self._phi, h)
                rep.modified_energy_before = rep.energy_before
                rep.modified_energy_after = rep.energy_after
            else:
                self._state, rep = self.stepper.step(self._state, h)
        except ConvergenceError as exc:
            raise SolverFailure(str(exc)) from exc
        except ValueError as exc:
            # radicand violations of the auxiliary-variable schemes
            raise SolverFailure(str(exc)) from exc
        return rep


def radius(phi, grid: UniformGrid) -> float:
    """Area-equivalent radius sqrt(A / pi), A = sum dx dy clamp((phi + 1)/2, 0, 1)."""
    if grid.dim != 2:
        raise ValueError("radius needs a 2D field")
    phi = grid.check_field(phi)
    area = grid.cell_volume * float(np.sum(np.clip(0.5 * (phi + 1.0), 0.0, 1.0)))
    return math.sqrt(area / math.pi)


def _wants_radius(cfg: ExperimentConfig) -> bool:
    return cfg.grid_dim == 2 and (cfg.radius_enabled or cfg.init_kind == "circle")


def run(cfg: ExperimentConfig, out_dir=None, on_row=None) -> RunResult:
    """Advance ``cfg`` from t = 0 to t_end, one CSV row per step.

    Output goes to ``out_dir`` (or ``cfg.output_dir``) when one is set; the
    CSV is written even when a step fails, and the failure is re-raised as
    :class:`SolverFailure`.
    """
    integ = Integrator(cfg)
    grid = integ.grid
    integ.start(initial_condition(cfg, grid))
    n = cfg.steps
    want_r = _wants_radius(cfg)
    out = Path(out_dir) if out_dir is not None else (Path(cfg.output_dir) if cfg.output_dir else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    snap_steps = {steps_for(t, cfg.h): t for t in cfg.output_snapshots}
    rows: list[TimeSeriesRow] = []
    solves = 0
    failure = None
    for k in range(1, n + 1):
        try:
            rep = integ.advance(cfg.h)
        except SolverFailure as exc:
            failure = SolverFailure(f"step {k} (t = {k * cfg.h:.6g}): {exc}")
            break
        solves += rep.linear_solves
        row = TimeSeriesRow(
            step=k,
            time=k * cfg.h,
            energy=rep.energy_after,
            modified_energy=rep.modified_energy_after,
            mass=rep.mass_after,
            newton_iters=rep.newton_iters,
            gmres_iters=rep.gmres_iters,
            radius=radius(integ.phi, grid) * cfg.radius_scale if want_r else None,
        )
        rows.append(row)
        if on_row is not None:
            on_row(row)
        if out is not None and k in snap_steps:
            emit_snapshot(integ.phi, grid, out / f"snapshot_{k:06d}.txt", row.time)
    if out is not None:
        emit_csv(rows, out / cfg.output_csv)
    if failure is not None:
        raise failure
    return RunResult(rows, integ.phi.copy(), grid, solves)


def emit_csv(rows, path) -> None:
    """CSV with :data:`CSV_HEADER`; floats with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([
                r.step, f"{r.time:.17g}", f"{r.energy:.17g}", f"{r.modified_energy:.17g}",
                f"{r.mass:.17g}", r.newton_iters, r.gmres_iters,
                "" if r.radius is None else f"{r.radius:.17g}",
            ])


def emit_snapshot(phi, grid: UniformGrid, path, time: float = 0.0) -> None:
    write_snapshot(path, phi, grid, time)


# -- convergence -------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    hs: list
    errors: list
    rates: list
    h_ref: float

    def format(self) -> str:
        lines = [f"reference h = {self.h_ref:.6g}", f"{'h':>14} {'error':>14} {'rate':>8}"]
        for i, (h, e) in enumerate(zip(self.hs, self.errors)):
            rate = "-" if i == 0 else f"{self.rates[i - 1]:.3f}"
            lines.append(f"{h:14.6g} {e:14.6e} {rate:>8}")
        return "\n".join(lines)


def _final_field(cfg: ExperimentConfig, h: float) -> np.ndarray:
    integ = Integrator(cfg)
    integ.start(initial_condition(cfg, integ.grid))
    for _ in range(steps_for(cfg.t_end, h)):
        integ.advance(h)
    return integ.phi.copy()


def convergence_study(cfg: ExperimentConfig, hs, reference_divisor: int = 32) -> ConvergenceTable:
    """Discrete L2 errors at t_end against the same scheme at min(h)/divisor.

    Rates are log(e_i / e_{i+1}) / log(h_i / h_{i+1}), i.e. log2 of the error
    ratio when the steps are halved.
    """
    hs = [float(h) for h in hs]
    if len(hs) < 3:
        raise ValueError("a convergence study needs at least 3 step sizes")
    if len(set(hs)) != len(hs):
        raise ValueError("step sizes must be distinct")
    for h in hs:
        steps_for(cfg.t_end, h)
    h_ref = min(hs) / reference_divisor
    grid = make_grid(cfg)
    ref = _final_field(cfg, h_ref)
    errors = []
    for h in hs:
        d = _final_field(cfg, h) - ref
        errors.append(math.sqrt(float(grid.inner(d, d))))
    rates = [math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1])
             if errors[i] > 0 and errors[i + 1] > 0 else float("nan")
             for i in range(len(hs) - 1)]
    return ConvergenceTable(hs, errors, rates, h_ref)


# -- shrinking circle ----------------------------------------------------------------

@dataclass
class RadiusBench:
    times: np.ndarray
    radii: np.ndarray
    law: np.ndarray
    r0: float
    max_rel_dev: float
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.max_rel_dev < 0.05


def radius_bench(cfg: ExperimentConfig, out_dir=None, time_scale: float | None = None) -> RadiusBench:
    """Run a circle experiment and compare R^2 with R0^2 - 2 t.

    Radii are reported times ``radius.scale``; time is converted with
    ``time_scale`` (default ``gamma * radius.scale^2``, the mapping that turns
    gamma Laplacian on the scaled domain into the unit Laplacian).  The
    deviation |R^2 - (R0^2 - 2t)| / R0^2 is taken over the middle half of the
    run.  Monotone decrease is required once the sharp initial profile has
    relaxed, i.e. after 5 reaction times eps^2 (code units).
    """
    if cfg.grid_dim != 2 or cfg.init_kind != "circle":
        raise ValueError("radius benchmark needs a 2D circle experiment")
    res = run(cfg, out_dir)
    scale = cfg.radius_scale
    ts = cfg.gamma * scale**2 if time_scale is None else time_scale
    times = np.array([r.time for r in res.rows]) * ts
    radii = np.array([r.radius for r in res.rows])
    r0 = radius(initial_condition(cfg, res.grid), res.grid) * scale
    r0_nominal = cfg.init_radius * scale
    law = r0_nominal**2 - 2.0 * times
    t_end = times[-1]
    mid = (times >= 0.25 * t_end) & (times <= 0.75 * t_end)
    dev = float(np.max(np.abs(radii[mid] ** 2 - law[mid])) / r0_nominal**2) if mid.any() else float("nan")
    relaxed = np.array([r.time for r in res.rows]) > 5.0 * cfg.epsilon**2
    monotone = bool(np.all(np.diff(radii[relaxed]) < 0))
    return RadiusBench(times, radii, law, r0, dev, monotone)
