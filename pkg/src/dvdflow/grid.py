"""Cell-centred uniform finite differences in one and two dimensions.

Field values live in numpy arrays of shape ``grid.shape`` (``(nx,)`` in 1D,
``(ny, nx)`` in 2D, i.e. row-major with flat index ``iy * nx + ix``).  All
operators accept extra leading axes, so a stack of stage fields of shape
``(nu, *grid.shape)`` is handled in one call.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["BoundaryCondition", "UniformGrid", "Field", "write_snapshot", "read_snapshot"]


class BoundaryCondition(enum.Enum):
    PERIODIC = "periodic"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, text: str) -> "BoundaryCondition":
        key = text.strip().lower()
        for bc in cls:
            if bc.value == key:
                return bc
        raise ValueError(f"unknown boundary condition {text!r}")


@dataclass(frozen=True)
class UniformGrid:
    """Uniform mesh of ``n`` cells per axis on ``[origin, origin + length]``.

    Per-axis tuples are ordered (x, y).  Ghost values are filled by periodic
    wrap or by reflection (phi_0 = phi_1, phi_{N+1} = phi_N) for the
    homogeneous Neumann case.
    """

    n: tuple[int, ...]
    length: tuple[float, ...]
    bc: BoundaryCondition = BoundaryCondition.PERIODIC
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        length = tuple(float(x) for x in np.atleast_1d(self.length))
        if len(n) not in (1, 2) or len(length) != len(n):
            raise ValueError("grid must be 1D or 2D with one length per axis")
        if any(k < 2 for k in n):
            raise ValueError("need at least 2 cells per axis")
        if any(not x > 0 for x in length):
            raise ValueError("domain lengths must be positive")
        origin = (0.0,) * len(n) if self.origin is None else tuple(
            float(x) for x in np.atleast_1d(self.origin))
        if len(origin) != len(n):
            raise ValueError("origin must have one entry per axis")
        bc = self.bc if isinstance(self.bc, BoundaryCondition) else BoundaryCondition.parse(self.bc)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "bc", bc)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / k for L, k in zip(self.length, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(reversed(self.n))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.length))

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates broadcast to ``shape``, ordered (x, y)."""
        axes = [o + (np.arange(k) + 0.5) * d for o, k, d in zip(self.origin, self.n, self.spacing)]
        if self.dim == 1:
            return (axes[0],)
        y, x = np.meshgrid(axes[1], axes[0], indexing="ij")
        return x, y

    # -- stencils ---------------------------------------------------------
    def _axis(self, d: int) -> int:
        # array axis (counted from the end) holding spatial direction d
        return -1 - d

    def _shift(self, f: np.ndarray, d: int, step: int) -> np.ndarray:
        """Neighbour values f[j + step] along direction ``d`` with ghosts."""
        ax = self._axis(d)
        if self.bc is BoundaryCondition.PERIODIC:
            return np.roll(f, -step, axis=ax)
        n = f.shape[ax]
        idx = np.clip(np.arange(n) + step, 0, n - 1)
        return np.take(f, idx, axis=ax)

    def forward_difference(self, f, d: int = 0) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return (self._shift(f, d, 1) - f) / self.spacing[d]

    def backward_difference(self, f, d: int = 0) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return (f - self._shift(f, d, -1)) / self.spacing[d]

    def laplacian(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for d in range(self.dim):
            out += (self._shift(f, d, 1) - 2.0 * f + self._shift(f, d, -1)) / self.spacing[d] ** 2
        return out

    def laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse matrix of :meth:`laplacian` in flat storage order."""
        mats = []
        for k, dx in zip(self.n, self.spacing):
            m = sp.diags([np.ones(k - 1), -2.0 * np.ones(k), np.ones(k - 1)], [-1, 0, 1],
                         format="lil")
            if self.bc is BoundaryCondition.PERIODIC:
                m[0, k - 1] += 1.0
                m[k - 1, 0] += 1.0
            else:
                m[0, 0] += 1.0
                m[k - 1, k - 1] += 1.0
            mats.append(m.tocsr() / dx**2)
        if self.dim == 1:
            return mats[0].tocsr()
        nx, ny = self.n
        return (sp.kron(sp.identity(ny), mats[0]) + sp.kron(mats[1], sp.identity(nx))).tocsr()

    def gradient_energy_density(self, f) -> np.ndarray:
        """Per-cell average of squared forward and backward differences, summed over axes."""
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for d in range(self.dim):
            out += 0.5 * (self.forward_difference(f, d) ** 2 + self.backward_difference(f, d) ** 2)
        return out

    # -- quadrature ---------------------------------------------------------
    def _sum(self, f: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return np.sum(f, axis=axes)

    def inner(self, f, g):
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        if f.shape[-self.dim:] != self.shape or g.shape[-self.dim:] != self.shape:
            raise ValueError("field shape does not match the grid")
        return self.cell_volume * self._sum(f * g)

    def mass(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape[-self.dim:] != self.shape:
            raise ValueError("field shape does not match the grid")
        return self.cell_volume * self._sum(f)

    def discrete_energy(self, f, fe) -> float:
        """Sum over cells of dx * (gamma/2 * gradient_energy_density + E1)."""
        f = np.asarray(f, dtype=float)
        dens = 0.5 * fe.gamma * self.gradient_energy_density(f) + fe.e1_density(f)
        return self.cell_volume * self._sum(dens)

    def sbp_residual(self, f, g) -> float:
        """Summation-by-parts defect sum g D^2 f + sum_d sum D+g D+f.

        Vanishes up to rounding for periodic and reflected-Neumann ghosts.
        """
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        total = float(np.sum(g * self.laplacian(f)))
        for d in range(self.dim):
            # reflected ghosts make D+ vanish across the last Neumann face
            total += float(np.sum(self.forward_difference(g, d) * self.forward_difference(f, d)))
        return total

    def check_field(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape != self.shape:
            if v.size == self.size:
                v = v.reshape(self.shape)
            else:
                raise ValueError(f"field has {v.size} values, grid has {self.size} cells")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        return v


@dataclass(frozen=True)
class Field:
    """Values of phi on the cells of ``grid``."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", self.grid.check_field(self.values))

    def laplacian(self) -> "Field":
        return Field(self.grid, self.grid.laplacian(self.values))

    def mass(self) -> float:
        return float(self.grid.mass(self.values))

    def inner(self, other: "Field") -> float:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return float(self.grid.inner(self.values, other.values))

    def energy(self, fe) -> float:
        return float(self.grid.discrete_energy(self.values, fe))


def write_snapshot(path, values, grid: UniformGrid, time: float = 0.0) -> None:
    """Text snapshot: ``# dim nx ny lx ly time`` then one value per line (17 digits)."""
    v = grid.check_field(values).ravel()
    nx = grid.n[0]
    ny = grid.n[1] if grid.dim == 2 else 1
    lx = grid.length[0]
    ly = grid.length[1] if grid.dim == 2 else 0.0
    with open(path, "w") as fh:
        fh.write(f"# {grid.dim} {nx} {ny} {lx!r} {ly!r} {float(time)!r}\n")
        fh.write("\n".join(f"{x:.17g}" for x in v))
        fh.write("\n")


def read_snapshot(path, bc: BoundaryCondition = BoundaryCondition.PERIODIC):
    """Inverse of :func:`write_snapshot`; returns ``(values, grid, time)``."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("snapshot header missing")
        parts = header[1:].split()
        if len(parts) != 6:
            raise ValueError("snapshot header must hold dim nx ny lx ly time")
        dim, nx, ny = (int(x) for x in parts[:3])
        lx, ly, time = (float(x) for x in parts[3:])
        data = np.loadtxt(fh, dtype=float, ndmin=1)
    if dim == 1:
        grid = UniformGrid((nx,), (lx,), bc)
    else:
        grid = UniformGrid((nx, ny), (lx, ly), bc)
    return grid.check_field(data), grid, time
