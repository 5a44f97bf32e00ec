"""Linear relaxed DVD schemes (one stage, semi-implicit).

All schemes share the quadratic operator L = -Laplacian + beta/eps^2 and the
shifted well density of :class:`~dvdflow.model.FreeEnergy`.  Each step
solves constant-coefficient systems ``I - h G (gamma/2) L`` (or the
stabilised analogue); their sparse LU is cached per step size and used as
the GMRES preconditioner, so a solve usually takes a single Krylov
iteration.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .dvd import StepReport, apply_dissipation, dissipation_matrix
from .grid import UniformGrid
from .model import DissipationKind, FreeEnergy
from .solver import LINEAR_KRYLOV, ConvergenceError, KrylovConfig, block_preconditioner, gmres

__all__ = [
    "RelaxedScheme",
    "AuxScalar",
    "AuxField",
    "RelaxedState",
    "LinearSolver",
    "StabilizationOperator",
    "extrapolate",
    "initial_state",
    "modified_energy",
    "rdvd1_step",
    "savcn_step",
    "ieq_step",
    "stabilized_step",
    "RelaxedStepper",
]


class RelaxedScheme(enum.Enum):
    RDVD1 = "R-DVD-1"
    SAVCN = "SAV/CN"
    IEQ = "IEQ"
    STABILIZED = "stabilized"

    @classmethod
    def parse(cls, text: str) -> "RelaxedScheme":
        key = text.strip().lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown relaxed scheme {text!r}")


@dataclass(frozen=True)
class AuxScalar:
    r: float
    m: int


@dataclass(frozen=True)
class AuxField:
    q: np.ndarray
    m: int


@dataclass(frozen=True)
class RelaxedState:
    phi_curr: np.ndarray
    phi_prev: np.ndarray | None
    aux: AuxScalar | AuxField | None
    scheme: RelaxedScheme


@dataclass(frozen=True)
class StabilizationOperator:
    """L_hat = a0 + a1 (-Laplacian) + a2 Laplacian^2; ``a0=None`` means 2/eps^2."""

    a0: float | None = None
    a1: float = 0.0
    a2: float = 0.0

    def coefficients(self, fe: FreeEnergy) -> tuple[float, float, float]:
        a0 = 2.0 / fe.epsilon**2 if self.a0 is None else float(self.a0)
        if min(a0, self.a1, self.a2) < 0:
            raise ValueError("stabilisation coefficients must be nonnegative")
        return a0, float(self.a1), float(self.a2)

    def matrix(self, grid: UniformGrid, fe: FreeEnergy) -> sp.csr_matrix:
        a0, a1, a2 = self.coefficients(fe)
        lap = grid.laplacian_matrix()
        return (a0 * sp.identity(grid.size) - a1 * lap + a2 * (lap @ lap)).tocsr()

    def apply(self, grid: UniformGrid, fe: FreeEnergy, f) -> np.ndarray:
        a0, a1, a2 = self.coefficients(fe)
        lf = grid.laplacian(f)
        return a0 * f - a1 * lf + a2 * grid.laplacian(lf)


class LinearSolver:
    """GMRES (or a direct LU solve) with factorisations cached by key.

    ``solves`` counts linear systems solved, which is the cost measure the
    relaxed schemes are compared by.  For stiff operators the printed
    residual rule can lie below what double precision can deliver; GMRES
    also stops at ``floor_factor * eps * ||A||_inf * ||b||`` (the systems
    here have ||A^{-1}||_2 <= 1, so this bounds the attainable residual) and
    such solves are counted in ``floor_solves``.
    """

    def __init__(self, cfg: KrylovConfig = LINEAR_KRYLOV, method: str = "gmres", cache_size: int = 8,
                 floor_factor: float = 1.0):
        if method not in ("gmres", "direct"):
            raise ValueError("method must be 'gmres' or 'direct'")
        self.cfg = cfg
        self.method = method
        self.cache_size = cache_size
        self._cache: dict = {}
        self.floor_factor = floor_factor
        self.solves = 0
        self.iterations = 0
        self.floor_solves = 0

    def factor(self, key, build):
        """Cached preconditioner for ``build()``; ``key=None`` disables caching."""
        if key is not None and key in self._cache:
            return self._cache[key]
        pre = block_preconditioner(build())
        if key is not None:
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = pre
        return pre

    def solve(self, matrix, rhs, precond, conserve: bool = False):
        """Solve ``matrix x = rhs``.

        ``conserve`` is for operators with 1^T A = 1^T (the H^-1 flows): a
        constant shift then makes sum(x) = sum(rhs) exactly, removing the
        mass error left by the finite solver tolerance.
        """
        self.solves += 1
        rhs = np.asarray(rhs, dtype=float).ravel()
        if self.method == "direct":
            x = precond.matvec(rhs)
            return x + (rhs.sum() - x.sum()) / x.size if conserve else x
        floor = 0.0
        if self.floor_factor > 0 and sp.issparse(matrix):
            norm_a = float(abs(matrix).sum(axis=1).max())
            floor = self.floor_factor * np.finfo(float).eps * norm_a * float(np.linalg.norm(rhs))
        x, info = gmres(matrix, rhs, precond, self.cfg, floor=floor)
        self.iterations += info.iterations
        if info.at_floor and not info.converged:
            self.floor_solves += 1
        elif not info.converged:
            raise ConvergenceError(
                f"linear solve did not converge in {info.iterations} iterations "
                f"(residual {info.residual_norm:.3e} > {info.target:.3e})", info)
        return x + (rhs.sum() - x.sum()) / x.size if conserve else x


def extrapolate(phi_n, phi_prev=None) -> np.ndarray:
    """3/2 phi_n - 1/2 phi_{n-1}; without history, phi_n itself."""
    phi_n = np.asarray(phi_n, dtype=float)
    if phi_prev is None:
        return phi_n.copy()
    phi_prev = np.asarray(phi_prev, dtype=float)
    if phi_prev.shape != phi_n.shape:
        raise ValueError("extrapolation needs fields on the same grid")
    return 1.5 * phi_n - 0.5 * phi_prev


# -- shared pieces ---------------------------------------------------------------

def _L(grid: UniformGrid, fe: FreeEnergy, f) -> np.ndarray:
    return -grid.laplacian(f) + fe.shift * f


def _L_matrix(grid: UniformGrid, fe: FreeEnergy) -> sp.csr_matrix:
    return (-grid.laplacian_matrix() + fe.shift * sp.identity(grid.size)).tocsr()


def _shifted_integral(grid: UniformGrid, fe: FreeEnergy, phi) -> float:
    return float(grid.cell_volume * np.sum(fe.shifted_density(phi)))


def _check_radicand(value, m: int, what: str):
    v = np.asarray(value, dtype=float)
    if m % 2 == 0 and np.any(v <= 0):
        raise ValueError(f"{what} radicand must be positive for even m = {m}; raise C0")
    if m % 2 == 1 and m > 1 and np.any(v == 0):
        raise ValueError(f"{what} radicand must be nonzero for odd m = {m}")


def _root(value, m: int):
    # real m-th root, sign-preserving for odd m
    return np.sign(value) * np.abs(value) ** (1.0 / m) if m % 2 else np.asarray(value) ** (1.0 / m)


def _scalar_aux(grid, fe, phi, m) -> float:
    rad = _shifted_integral(grid, fe, phi) + fe.c0
    _check_radicand(rad, m, "scalar auxiliary")
    return float(_root(rad, m))


def _field_aux(fe, phi, m) -> np.ndarray:
    rad = fe.shifted_density(phi) + fe.c0
    _check_radicand(rad, m, "field auxiliary")
    return np.asarray(_root(rad, m), dtype=float)


def _base_matrix(grid, fe, kind, h):
    """I - h G (gamma/2) L."""
    g = dissipation_matrix(grid, kind)
    return (sp.identity(grid.size) - h * 0.5 * fe.gamma * (g @ _L_matrix(grid, fe))).tocsr()


def _report(grid, fe, phi0, phi1, solver, solves_before, its_before, me0, me1) -> StepReport:
    return StepReport(
        energy_before=float(grid.discrete_energy(phi0, fe)),
        energy_after=float(grid.discrete_energy(phi1, fe)),
        mass_before=float(grid.mass(phi0)),
        mass_after=float(grid.mass(phi1)),
        gmres_iters=solver.iterations - its_before,
        linear_solves=solver.solves - solves_before,
        modified_energy_before=me0,
        modified_energy_after=me1,
    )


def initial_state(grid: UniformGrid, fe: FreeEnergy, phi0, scheme: RelaxedScheme, m: int = 1) -> RelaxedState:
    """State at t = 0 with the auxiliary variable set to its exact value."""
    phi0 = grid.check_field(phi0).copy()
    if scheme is RelaxedScheme.RDVD1:
        m = 1
    elif scheme is RelaxedScheme.SAVCN:
        m = 2
    if scheme in (RelaxedScheme.RDVD1, RelaxedScheme.SAVCN):
        aux = AuxScalar(_scalar_aux(grid, fe, phi0, m), m)
    elif scheme is RelaxedScheme.IEQ:
        if m not in (1, 2):
            raise ValueError("IEQ scheme supports m = 1 or m = 2")
        aux = AuxField(_field_aux(fe, phi0, m), m)
    else:
        aux = None
    return RelaxedState(phi0, None, aux, scheme)


def modified_energy(grid: UniformGrid, phi, aux, fe: FreeEnergy) -> float:
    """gamma/2 <phi, L phi> + r^m (scalar) or + sum dx Q^m (field).

    Without an auxiliary variable (stabilised scheme) this is the original
    discrete energy.
    """
    phi = np.asarray(phi, dtype=float)
    if aux is None:
        return float(grid.discrete_energy(phi, fe))
    quad = 0.5 * fe.gamma * float(grid.inner(phi, _L(grid, fe, phi)))
    if isinstance(aux, AuxScalar):
        return quad + float(aux.r) ** aux.m
    return quad + float(grid.cell_volume * np.sum(np.asarray(aux.q) ** aux.m))


# -- schemes ---------------------------------------------------------------------

def _scalar_step(state, grid, fe, kind, h, solver, m):
    phi0 = state.phi_curr
    bar = extrapolate(phi0, state.phi_prev)
    r0 = state.aux.r
    if m == 1:
        w = fe.shifted_derivative(bar)
    else:
        rbar = _scalar_aux(grid, fe, bar, m)
        w = fe.shifted_derivative(bar) / (m * rbar ** (m - 1))
    A = _base_matrix(grid, fe, kind, h)
    pre = solver.factor(("base", grid, fe, kind, h), lambda: A)
    s0, i0 = solver.solves, solver.iterations
    cons = kind is DissipationKind.HMINUS1
    half_l0 = 0.5 * fe.gamma * _L(grid, fe, phi0)
    if m == 1:
        rhs = phi0 + h * apply_dissipation(grid, kind, half_l0 + w)
        phi1 = solver.solve(A, rhs.ravel(), pre, cons).reshape(grid.shape)
    else:
        # mu = gamma/2 L(phi1 + phi0) + (2 r0 + <w, phi1 - phi0>) w; eliminate the
        # rank-one term: phi1 = x1 + s x2 with s = <w, phi1>
        rhs = phi0 + h * apply_dissipation(grid, kind, half_l0 + (2.0 * r0 - grid.inner(w, phi0)) * w)
        x1 = solver.solve(A, rhs.ravel(), pre, cons).reshape(grid.shape)
        x2 = solver.solve(A, (h * apply_dissipation(grid, kind, w)).ravel(), pre, cons).reshape(grid.shape)
        s = grid.inner(w, x1) / (1.0 - grid.inner(w, x2))
        phi1 = x1 + s * x2
    r1 = r0 + float(grid.inner(w, phi1 - phi0))
    aux1 = AuxScalar(r1, m)
    report = _report(grid, fe, phi0, phi1, solver, s0, i0,
                     modified_energy(grid, phi0, state.aux, fe), modified_energy(grid, phi1, aux1, fe))
    return phi1, aux1, report


def rdvd1_step(state: RelaxedState, grid: UniformGrid, fe: FreeEnergy, kind: DissipationKind,
               h: float, solver: LinearSolver):
    """R-DVD-1: scalar auxiliary with m = 1, one linear solve."""
    if not h > 0:
        raise ValueError("time step must be positive")
    return _scalar_step(state, grid, fe, kind, h, solver, 1)


def savcn_step(state: RelaxedState, grid: UniformGrid, fe: FreeEnergy, kind: DissipationKind,
               h: float, solver: LinearSolver):
    """SAV/CN: scalar auxiliary with m = 2, two linear solves plus a scalar equation."""
    if not h > 0:
        raise ValueError("time step must be positive")
    return _scalar_step(state, grid, fe, kind, h, solver, 2)


def ieq_step(state: RelaxedState, grid: UniformGrid, fe: FreeEnergy, kind: DissipationKind,
             h: float, solver: LinearSolver):
    """Field auxiliary Q; m = 1 is decoupled, m = 2 gives a variable-coefficient system."""
    if not h > 0:
        raise ValueError("time step must be positive")
    m = state.aux.m
    phi0 = state.phi_curr
    q0 = np.asarray(state.aux.q, dtype=float)
    bar = extrapolate(phi0, state.phi_prev)
    A = _base_matrix(grid, fe, kind, h)
    pre = solver.factor(("base", grid, fe, kind, h), lambda: A)
    s0, i0 = solver.solves, solver.iterations
    cons = kind is DissipationKind.HMINUS1
    half_l0 = 0.5 * fe.gamma * _L(grid, fe, phi0)
    if m == 1:
        w = fe.shifted_derivative(bar)
        rhs = phi0 + h * apply_dissipation(grid, kind, half_l0 + w)
        phi1 = solver.solve(A, rhs.ravel(), pre, cons).reshape(grid.shape)
    elif m == 2:
        w = fe.shifted_derivative(bar) / (2.0 * _field_aux(fe, bar, 2))
        g = dissipation_matrix(grid, kind)
        Av = (A - h * (g @ sp.diags(w.ravel() ** 2))).tocsr()
        rhs = phi0 + h * apply_dissipation(grid, kind, half_l0 + 2.0 * w * q0 - w**2 * phi0)
        phi1 = solver.solve(Av, rhs.ravel(), pre, cons).reshape(grid.shape)
    else:
        raise ValueError("IEQ scheme supports m = 1 or m = 2")
    aux1 = AuxField(q0 + w * (phi1 - phi0), m)
    report = _report(grid, fe, phi0, phi1, solver, s0, i0,
                     modified_energy(grid, phi0, state.aux, fe), modified_energy(grid, phi1, aux1, fe))
    return phi1, aux1, report


def stabilized_step(state: RelaxedState, grid: UniformGrid, fe: FreeEnergy, kind: DissipationKind,
                    h: float, solver: LinearSolver, lhat: StabilizationOperator = StabilizationOperator()):
    """First-order convex-splitting step: implicit -gamma Lap + L_hat, explicit rest."""
    if not h > 0:
        raise ValueError("time step must be positive")
    phi0 = state.phi_curr
    g = dissipation_matrix(grid, kind)

    def build():
        op = -fe.gamma * grid.laplacian_matrix() + lhat.matrix(grid, fe)
        return (sp.identity(grid.size) - h * (g @ op)).tocsr()

    key = ("stab", grid, fe, kind, h, lhat)
    pre = solver.factor(key, build)
    A = build()
    s0, i0 = solver.solves, solver.iterations
    cons = kind is DissipationKind.HMINUS1
    rhs = phi0 + h * apply_dissipation(grid, kind, fe.e1_derivative(phi0) - lhat.apply(grid, fe, phi0))
    phi1 = solver.solve(A, rhs.ravel(), pre, cons).reshape(grid.shape)
    e0 = float(grid.discrete_energy(phi0, fe))
    e1 = float(grid.discrete_energy(phi1, fe))
    return phi1, None, _report(grid, fe, phi0, phi1, solver, s0, i0, e0, e1)


class RelaxedStepper:
    """Drives one relaxed scheme: ``state = stepper.initial(phi0)`` then ``stepper.step(state, h)``."""

    def __init__(self, grid: UniformGrid, fe: FreeEnergy, kind: DissipationKind, scheme: RelaxedScheme,
                 m: int = 1, lhat: StabilizationOperator = StabilizationOperator(),
                 solver: LinearSolver | None = None):
        self.grid = grid
        self.fe = fe
        self.kind = kind
        self.scheme = scheme
        self.m = m
        self.lhat = lhat
        self.solver = solver or LinearSolver()

    def initial(self, phi0) -> RelaxedState:
        return initial_state(self.grid, self.fe, phi0, self.scheme, self.m)

    def step(self, state: RelaxedState, h: float):
        """Advance ``state`` by ``h``; returns ``(new_state, StepReport)``."""
        args = (state, self.grid, self.fe, self.kind, h, self.solver)
        if self.scheme is RelaxedScheme.RDVD1:
            phi1, aux, rep = rdvd1_step(*args)
        elif self.scheme is RelaxedScheme.SAVCN:
            phi1, aux, rep = savcn_step(*args)
        elif self.scheme is RelaxedScheme.IEQ:
            phi1, aux, rep = ieq_step(*args)
        else:
            phi1, aux, rep = stabilized_step(*args, lhat=self.lhat)
        return replace(state, phi_curr=phi1, phi_prev=state.phi_curr, aux=aux), rep
