"""Implicit nu-stage DVD time step on the finite-difference grid."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .grid import UniformGrid
from .model import DissipationKind, FreeEnergy
from .solver import (
    NEWTON_KRYLOV,
    ConvergenceError,
    KrylovConfig,
    NewtonConfig,
    block_preconditioner,
    newton,
)
from .tableau import DvdTableau, pairs

__all__ = [
    "StepReport",
    "StepRejected",
    "discrete_mu",
    "dvd_identity_residual",
    "apply_dissipation",
    "DvdStepper",
]


class StepRejected(ConvergenceError):
    """The stage equations could not be solved; the step start is untouched."""


@dataclass
class StepReport:
    energy_before: float
    energy_after: float
    mass_before: float
    mass_after: float
    newton_iters: int = 0
    gmres_iters: int = 0
    linear_solves: int = 0
    dvd_identity_residual: float = 0.0
    modified_energy_before: float | None = None
    modified_energy_after: float | None = None
    residual_norm: float = 0.0
    continuation_solves: int = 1


def discrete_mu(grid: UniformGrid, fi, fj, fe: FreeEnergy) -> np.ndarray:
    """-gamma/2 (Lap fi + Lap fj) + E1{fi, fj}."""
    fi = np.asarray(fi, dtype=float)
    fj = np.asarray(fj, dtype=float)
    if fi.shape != fj.shape:
        raise ValueError("fields must share one grid")
    return -0.5 * fe.gamma * grid.laplacian(fi + fj) + fe.e1_quotient(fi, fj)


def dvd_identity_residual(grid: UniformGrid, fi, fj, fe: FreeEnergy) -> float:
    """E(fi) - E(fj) - <fi - fj, mu[fi, fj]>; zero up to rounding."""
    mu = discrete_mu(grid, fi, fj, fe)
    return float(grid.discrete_energy(fi, fe) - grid.discrete_energy(fj, fe)
                 - grid.inner(np.asarray(fi) - np.asarray(fj), mu))


def apply_dissipation(grid: UniformGrid, kind: DissipationKind, v):
    if kind is DissipationKind.L2:
        return -np.asarray(v, dtype=float)
    return grid.laplacian(v)


def dissipation_matrix(grid: UniformGrid, kind: DissipationKind) -> sp.csr_matrix:
    if kind is DissipationKind.L2:
        return -sp.identity(grid.size, format="csr")
    return grid.laplacian_matrix()


class DvdStepper:
    """Solves the coupled stage equations

        F_i = phi_i - phi_0 - h G sum_k a_ik y_k = 0,   i = 1..nu,

    with y_k = mu[phi_{i_k}, phi_{j_k}], by Newton--GMRES.

    The unknown vector is ordered by points (all stages of cell 1, then
    cell 2, ...), so contiguous preconditioner blocks are spatial
    subdomains.  Stages are guessed equal to phi_0.

    When Newton fails from that guess (large h during fast phase
    separation can leave |F| stuck at a local minimum), two fallbacks run
    in turn.  First the stages are guessed by marching this same scheme to
    each node c_i h in steps of at most h / ``predictor_substeps`` (0
    disables it; sub-steps may use the fallbacks too, two levels deep).
    Then the step is re-solved by continuation in the step size: the stage
    equations are solved for t h with t increasing to 1, each solve
    starting from the previous one.  This follows the solution branch that
    tends to phi_0 as h -> 0; ``min_fraction`` bounds how small the
    increment of t may get.  ``StepReport.continuation_solves`` counts the
    Newton solves of the full step's equations.
    """

    def __init__(
        self,
        grid: UniformGrid,
        tableau: DvdTableau,
        kind: DissipationKind,
        fe: FreeEnergy,
        newton_cfg: NewtonConfig = NewtonConfig(),
        krylov_cfg: KrylovConfig = NEWTON_KRYLOV,
        precond_block: int | None = None,
        precond_overlap: int = 0,
        use_preconditioner: bool = True,
        continuation: bool = True,
        min_fraction: float = 1e-6,
        predictor_substeps: int = 8,
    ):
        self.grid = grid
        self.tableau = tableau
        self.kind = kind
        self.fe = fe
        self.newton_cfg = newton_cfg
        self.krylov_cfg = krylov_cfg
        self.precond_block = precond_block
        self.precond_overlap = precond_overlap
        self.use_preconditioner = use_preconditioner
        self.continuation = continuation
        self.min_fraction = min_fraction
        if predictor_substeps < 0:
            raise ValueError("predictor_substeps must be nonnegative")
        self.predictor_substeps = int(predictor_substeps)
        self._a = tableau.as_array()
        self._cols = tableau.used_columns()
        self._pairs = [pairs(tableau.nu)[k] for k in self._cols]
        self._coupling = tableau.stage_coupling()
        self._lap = grid.laplacian_matrix()
        self._g = dissipation_matrix(grid, kind)

    @property
    def nu(self) -> int:
        return self.tableau.nu

    # -- layout ------------------------------------------------------------
    def pack(self, stages: np.ndarray) -> np.ndarray:
        """(nu, *shape) stage stack -> point-ordered vector."""
        return np.asarray(stages, dtype=float).reshape(self.nu, -1).T.ravel()

    def unpack(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x).reshape(-1, self.nu).T.reshape((self.nu,) + self.grid.shape)

    def _full(self, phi0, stages):
        return np.concatenate([np.asarray(phi0, dtype=float)[None], stages])

    # -- stage equations ----------------------------------------------------
    def pair_mus(self, phi0, stages) -> np.ndarray:
        full = self._full(phi0, stages)
        return np.stack([discrete_mu(self.grid, full[i], full[j], self.fe) for i, j in self._pairs])

    def residual(self, phi0, stages, h: float) -> np.ndarray:
        """Stage residuals F_i as a (nu, *shape) array."""
        stages = np.asarray(stages, dtype=float)
        y = self.pair_mus(phi0, stages)
        comb = np.tensordot(self._a[:, self._cols], y, axes=1)
        return stages - np.asarray(phi0)[None] - h * apply_dissipation(self.grid, self.kind, comb)

    def jacobian_apply(self, phi0, stages, direction, h: float) -> np.ndarray:
        """Directional derivative of :meth:`residual` along ``direction``."""
        stages = np.asarray(stages, dtype=float)
        direction = np.asarray(direction, dtype=float)
        full = self._full(phi0, stages)
        dfull = np.concatenate([np.zeros((1,) + self.grid.shape), direction])
        dy = []
        for i, j in self._pairs:
            a, b = full[i], full[j]
            d = -0.5 * self.fe.gamma * self.grid.laplacian(dfull[i] + dfull[j])
            d = d + self.fe.e1_quotient_da(a, b) * dfull[i] + self.fe.e1_quotient_da(b, a) * dfull[j]
            dy.append(d)
        comb = np.tensordot(self._a[:, self._cols], np.stack(dy), axes=1)
        return direction - h * apply_dissipation(self.grid, self.kind, comb)

    def preconditioner_matrix(self, phi0, h: float) -> sp.csr_matrix:
        """Linearised stage operator with the quotient frozen at phi_0.

        I - h (M kron G (-gamma/2 Lap + diag(E1''(phi_0)/2))) in point
        ordering, where M is the tableau's stage-coupling matrix.
        """
        n = self.grid.size
        curv = 0.5 * self.fe.e1_second_derivative(np.asarray(phi0, dtype=float).ravel())
        inner = -0.5 * self.fe.gamma * self._lap + sp.diags(curv)
        spatial = (self._g @ inner).tocsr()
        return (sp.identity(n * self.nu) - h * sp.kron(spatial, self._coupling)).tocsr()

    def _newton(self, phi0, h: float, x0):
        def F(x):
            return self.pack(self.residual(phi0, self.unpack(x), h))

        def J(x, d):
            return self.pack(self.jacobian_apply(phi0, self.unpack(x), self.unpack(d), h))

        factory = None
        if self.use_preconditioner:
            def factory(_x):
                return block_preconditioner(self.preconditioner_matrix(phi0, h),
                                            self.precond_block, self.precond_overlap)

        return newton(F, J, x0, self.newton_cfg, self.krylov_cfg, factory)

    def _predict(self, phi0, h: float, depth: int) -> np.ndarray:
        """Stage guess from ``predictor_substeps`` steps of this scheme per h."""
        m = self.predictor_substeps
        guess, p, t = [], np.asarray(phi0, dtype=float), Fraction(0)
        for c in sorted(set(self.tableau.nodes)):
            if c <= t:
                continue
            pieces = max(1, math.ceil((c - t) * m))
            dt = float(c - t) * h / pieces
            for _ in range(pieces):
                stages, _, _ = self.solve_stages(p, dt, depth + 1)
                p = stages[-1]
            guess.append((c, p))
            t = c
        at = dict(guess)
        return np.stack([at.get(c, phi0) for c in self.tableau.nodes])

    def solve_stages(self, phi0, h: float, _depth: int = 0):
        """Stage values ``(nu, *shape)``, Newton info and the number of solves used."""
        phi0 = np.asarray(phi0, dtype=float)
        x = self.pack(np.broadcast_to(phi0, (self.nu,) + phi0.shape))
        solves = 1
        try:
            x, info = self._newton(phi0, h, x)
            return self.unpack(x), info, solves
        except ConvergenceError as exc:
            first = exc
        if self.predictor_substeps and _depth < 2:
            # a stage guess from sub-steps reaches roots that continuation
            # from phi_0 cannot when the branch through phi_0 folds
            try:
                guess = self._predict(phi0, h, _depth)
                solves += 1
                x_p, info = self._newton(phi0, h, self.pack(guess))
                return self.unpack(x_p), info, solves
            except (ConvergenceError, StepRejected):
                pass
        if not self.continuation:
            raise StepRejected(f"DVD step rejected: {first}", first.info) from first
        t, dt = 0.0, 0.5
        iters = gmres_iters = 0
        while t < 1.0:
            tn = min(1.0, t + dt)
            solves += 1
            try:
                x_new, info = self._newton(phi0, tn * h, x)
            except ConvergenceError as exc:
                iters += exc.info.iterations if exc.info else 0
                dt *= 0.5
                if dt < self.min_fraction:
                    raise StepRejected(
                        f"DVD step rejected: {first}; continuation stalled at t = {t:.6g}",
                        exc.info) from exc
                continue
            x, t = x_new, tn
            iters += info.iterations
            gmres_iters += info.gmres_iterations
            dt *= 2.0
        info.iterations = iters
        info.gmres_iterations = gmres_iters
        return self.unpack(x), info, solves

    def step(self, phi0, h: float):
        """Advance one step of size ``h``; returns ``(phi_nu, StepReport)``."""
        if not h > 0:
            raise ValueError("time step must be positive")
        phi0 = self.grid.check_field(phi0)
        stages, info, solves = self.solve_stages(phi0, h)
        full = self._full(phi0, stages)
        ident = max((abs(dvd_identity_residual(self.grid, full[i], full[j], self.fe))
                     for i, j in self._pairs), default=0.0)
        phi1 = stages[-1].copy()
        report = StepReport(
            energy_before=float(self.grid.discrete_energy(phi0, self.fe)),
            energy_after=float(self.grid.discrete_energy(phi1, self.fe)),
            mass_before=float(self.grid.mass(phi0)),
            mass_after=float(self.grid.mass(phi1)),
            newton_iters=info.iterations,
            gmres_iters=info.gmres_iterations,
            linear_solves=info.iterations,
            dvd_identity_residual=ident,
            residual_norm=info.residual_norm,
            continuation_solves=solves,
        )
        return phi1, report
