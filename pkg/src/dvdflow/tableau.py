"""Stage tableaux for discrete-variational-derivative (DVD) Runge--Kutta schemes.

A nu-stage DVD scheme couples the stage values phi_1..phi_nu through the
nu_hat = nu(nu+1)/2 pairwise discrete variational derivatives
mu[phi_i, phi_j] (0 <= j < i <= nu).  The tableau stores the nu rows of
coefficients that weight those derivatives; everything here is exact
rational arithmetic except the eigenvalue checks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "DvdTableau",
    "PairIndex",
    "StabilityCertificate",
    "pair_count",
    "pair_index",
    "pair_of",
    "pairs",
    "builtin_tableau",
    "BUILTIN_NAMES",
    "BUILTIN_PARTITIONS",
    "certify_builtin",
    "expand_matrix",
    "unit_partition_system",
    "satisfies_partition",
    "build_certificate",
    "is_psd",
    "is_psd_exact",
    "lagrange_weights",
    "construct_tableau",
    "find_partition_vector",
    "dumps_tableau",
    "loads_tableau",
    "read_tableau",
    "write_tableau",
]

PSD_TOL = 1e-12


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(x)


def pair_count(nu: int) -> int:
    if nu < 1:
        raise ValueError(f"stage count must be positive, got {nu}")
    return nu * (nu + 1) // 2


def pair_index(i: int, j: int, nu: int) -> int:
    """Linear (1-based) column of the pair ``mu[phi_i, phi_j]``.

    Pairs are grouped by ``j`` ascending, then ``i`` ascending, so the
    first ``nu`` columns are the pairs against the step start ``phi_0``.
    """
    if not 0 <= j < i <= nu:
        raise ValueError(f"invalid stage pair (i={i}, j={j}) for nu={nu}")
    return j * (2 * nu - j + 1) // 2 + (i - j)


def pairs(nu: int) -> list[tuple[int, int]]:
    """All ``(i, j)`` pairs in column order."""
    return [(i, j) for j in range(nu) for i in range(j + 1, nu + 1)]


def pair_of(k: int, nu: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`."""
    if not 1 <= k <= pair_count(nu):
        raise ValueError(f"column {k} out of range for nu={nu}")
    return pairs(nu)[k - 1]


@dataclass(frozen=True)
class PairIndex:
    i: int
    j: int
    nu: int

    def __post_init__(self):
        pair_index(self.i, self.j, self.nu)

    @property
    def k(self) -> int:
        return pair_index(self.i, self.j, self.nu)


@dataclass(frozen=True)
class DvdTableau:
    """Exact tableau of a nu-stage DVD scheme.

    ``rows[i-1][k-1]`` is the weight of the k-th pairwise derivative in the
    update of stage ``i``; ``nodes[i-1]`` is the stage time fraction c_i.
    """

    nu: int
    nodes: tuple[Fraction, ...]
    rows: tuple[tuple[Fraction, ...], ...]
    order: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        nu_hat = pair_count(self.nu)
        nodes = tuple(_frac(c) for c in self.nodes)
        rows = tuple(tuple(_frac(a) for a in row) for row in self.rows)
        if len(nodes) != self.nu or len(rows) != self.nu:
            raise ValueError("tableau needs exactly nu nodes and nu rows")
        for i, row in enumerate(rows):
            if len(row) != nu_hat:
                raise ValueError(f"row {i + 1} has {len(row)} entries, expected {nu_hat}")
            if sum(row) != nodes[i]:
                raise ValueError(
                    f"row {i + 1} sums to {sum(row)} but c_{i + 1} = {nodes[i]}"
                )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "rows", rows)

    @property
    def nu_hat(self) -> int:
        return pair_count(self.nu)

    def as_array(self) -> np.ndarray:
        return np.array([[float(a) for a in row] for row in self.rows])

    def used_columns(self) -> list[int]:
        """0-based columns with at least one nonzero coefficient."""
        return [k for k in range(self.nu_hat) if any(row[k] != 0 for row in self.rows)]

    def stage_coupling(self) -> np.ndarray:
        """nu x nu matrix M with M[i, l] = sum_k a_ik ([i_k = l] + [j_k = l]).

        Multiplies the symmetric stiff part of the stage equations; used to
        assemble preconditioners.
        """
        m = np.zeros((self.nu, self.nu))
        for k, (i, j) in enumerate(pairs(self.nu)):
            for s in range(self.nu):
                a = float(self.rows[s][k])
                m[s, i - 1] += a
                if j > 0:
                    m[s, j - 1] += a
        return m


_F = Fraction
_BUILTIN = {
    "Sch-1": (1, [1], [[1]], 2),
    "Sch-2": (2, [_F(1, 3), 1], [[_F(7, 18), _F(-1, 6), _F(1, 9)], [_F(1, 2), _F(-1, 2), 1]], 3),
    "Sch-3": (2, [_F(1, 2), 1], [[_F(7, 12), _F(-1, 6), _F(1, 12)], [_F(2, 3), _F(-1, 3), _F(2, 3)]], 4),
    "Sch-4": (
        3,
        [_F(1, 3), _F(2, 3), 1],
        [
            [_F(25, 72), 0, _F(-1, 24), _F(1, 72), 0, _F(1, 72)],
            [_F(13, 36), 0, _F(-1, 12), _F(13, 36), 0, _F(1, 36)],
            [_F(3, 8), 0, _F(-1, 8), _F(3, 8), 0, _F(3, 8)],
        ],
        4,
    ),
}
BUILTIN_NAMES = tuple(_BUILTIN)

# Partition vectors proving the shipped tableaux stable.
BUILTIN_PARTITIONS = {
    "Sch-1": (_F(1),),
    "Sch-2": (_F(3, 2), _F(-1, 2), _F(3, 2)),
    "Sch-3": (_F(4, 3), _F(-1, 3), _F(4, 3)),
    "Sch-4": tuple(_F(n, 8) for n in (9, 0, -1, 9, 0, 9)),
}


def builtin_tableau(name: str) -> DvdTableau:
    try:
        nu, nodes, rows, order = _BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(_BUILTIN)}") from None
    return DvdTableau(nu, tuple(nodes), tuple(tuple(r) for r in rows), order, name=name)


def expand_matrix(tab: DvdTableau) -> list[list[Fraction]]:
    """Square nu_hat x nu_hat matrix acting on the full pair vector.

    Row ``k`` for pair ``(i, j)`` is ``row_i - row_j`` (``row_0 = 0``), so that
    ``phi_i - phi_j = h G (row_k . y)``.
    """
    zero = [Fraction(0)] * tab.nu_hat
    full = [zero] + [list(r) for r in tab.rows]
    return [[a - b for a, b in zip(full[i], full[j])] for i, j in pairs(tab.nu)]


def unit_partition_system(nu: int) -> tuple[list[list[Fraction]], list[Fraction]]:
    """Constraints ``C v = e`` making ``v`` a unit partition of E^nu - E^0.

    One row per energy level m = 0..nu: the net weight of level m over all
    pairs must be +1 for m = nu, -1 for m = 0 and zero otherwise.  The rows
    sum to zero, so one of them is redundant.
    """
    ps = pairs(nu)
    c = [[Fraction(0)] * len(ps) for _ in range(nu + 1)]
    for k, (i, j) in enumerate(ps):
        c[i][k] += 1
        c[j][k] -= 1
    e = [Fraction(0)] * (nu + 1)
    e[nu] += 1
    e[0] -= 1
    return c, e


def satisfies_partition(v: Sequence, nu: int) -> bool:
    c, e = unit_partition_system(nu)
    if len(v) != pair_count(nu):
        return False
    v = [_frac(x) for x in v]
    return all(sum(a * b for a, b in zip(row, v)) == rhs for row, rhs in zip(c, e))


@dataclass(frozen=True)
class StabilityCertificate:
    v: tuple[Fraction, ...]
    B: tuple[tuple[Fraction, ...], ...]
    min_eigenvalue: float

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return self.min_eigenvalue >= -tol

    def B_array(self) -> np.ndarray:
        return _to_float(self.B)


def _to_float(mat) -> np.ndarray:
    return np.array([[float(a) for a in row] for row in mat], dtype=float)


def _certificate_matrix(a: Sequence[Sequence[Fraction]], v: Sequence[Fraction]):
    n = len(v)
    return tuple(
        tuple((v[r] * a[r][c] + a[c][r] * v[c]) / 2 for c in range(n)) for r in range(n)
    )


def build_certificate(A: Sequence[Sequence], v: Sequence) -> StabilityCertificate:
    """B = (diag(v) A + A^T diag(v)) / 2 together with its smallest eigenvalue."""
    n = len(A)
    if any(len(row) != n for row in A):
        raise ValueError("expanded matrix must be square")
    if len(v) != n:
        raise ValueError(f"partition vector has length {len(v)}, expected {n}")
    nu = int(round((np.sqrt(8 * n + 1) - 1) / 2))
    if pair_count(nu) != n:
        raise ValueError(f"dimension {n} is not a triangular number")
    a = [[_frac(x) for x in row] for row in A]
    v = tuple(_frac(x) for x in v)
    if not satisfies_partition(v, nu):
        raise ValueError("v is not a unit partition vector")
    B = _certificate_matrix(a, v)
    lam = float(np.linalg.eigvalsh(_to_float(B))[0])
    return StabilityCertificate(v, B, lam)


def is_psd(B, tol: float = PSD_TOL) -> tuple[bool, float]:
    """Floating-point PSD test; returns the verdict and the smallest eigenvalue."""
    b = B if isinstance(B, np.ndarray) else _to_float(B)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("matrix must be square")
    if not np.array_equal(b, b.T):
        raise ValueError("matrix is not symmetric")
    lam = float(np.linalg.eigvalsh(b)[0])
    return lam >= -tol, lam


def _det(mat: list[list[Fraction]]) -> Fraction:
    # Fraction-valued Gaussian elimination; fine for the tiny sizes used here.
    m = [row[:] for row in mat]
    n = len(m)
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        det *= m[col][col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            if f:
                for c in range(col, n):
                    m[r][c] -= f * m[col][c]
    return det


def is_psd_exact(B: Sequence[Sequence]) -> bool:
    """Exact PSD test: every principal minor is nonnegative.

    Exponential in the dimension; intended for nu_hat <= 6.
    """
    b = [[_frac(x) for x in row] for row in B]
    n = len(b)
    if any(b[r][c] != b[c][r] for r in range(n) for c in range(n)):
        raise ValueError("matrix is not symmetric")
    for size in range(1, n + 1):
        for idx in itertools.combinations(range(n), size):
            if _det([[b[r][c] for c in idx] for r in idx]) < 0:
                return False
    return True


def _poly_mul(p: list[Fraction], q: list[Fraction]) -> list[Fraction]:
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for a, x in enumerate(p):
        for b, y in enumerate(q):
            out[a + b] += x * y
    return out


def lagrange_weights(nodes: Sequence, a, b) -> list[Fraction]:
    """Exact weights w_i = integral over [a, b] of the Lagrange basis l_i."""
    t = [_frac(x) for x in nodes]
    a, b = _frac(a), _frac(b)
    if len(set(t)) != len(t):
        raise ValueError("quadrature nodes must be distinct")
    if not a < b:
        raise ValueError("need a < b")
    weights = []
    for i, ti in enumerate(t):
        poly = [Fraction(1)]
        for k, tk in enumerate(t):
            if k != i:
                poly = _poly_mul(poly, [-tk / (ti - tk), 1 / (ti - tk)])
        weights.append(
            sum(c * (b ** (n + 1) - a ** (n + 1)) / (n + 1) for n, c in enumerate(poly))
        )
    return weights


def construct_tableau(
    nu: int,
    nodes: Sequence,
    pair_selection: Sequence[tuple[int, int] | PairIndex],
    corrections: Sequence[Sequence | None] = (),
    order: int = 0,
    name: str = "",
) -> DvdTableau:
    """Build a tableau by interpolatory quadrature over the selected pairs.

    Each selected derivative ``mu[phi_i, phi_j]`` is treated as a sample at
    its midpoint time (c_i + c_j) / 2.  Row ``i`` gets the Lagrange weights
    for the integral over [0, c_i], placed at the selected columns, plus the
    optional correction vector ``corrections[i-1]`` (missing or ``None``
    entries mean no correction).  Corrections must sum to zero so that the
    row sums stay equal to c_i.
    """
    c = [_frac(x) for x in nodes]
    if len(c) != nu:
        raise ValueError(f"expected {nu} nodes, got {len(c)}")
    nu_hat = pair_count(nu)
    sel = [(p.i, p.j) if isinstance(p, PairIndex) else tuple(p) for p in pair_selection]
    cols = [pair_index(i, j, nu) - 1 for i, j in sel]
    full = [Fraction(0)] + c
    mids = [(full[i] + full[j]) / 2 for i, j in sel]
    if len(set(mids)) != len(mids):
        raise ValueError("selected pairs must have distinct midpoints")
    if len(corrections) > nu:
        raise ValueError("more correction vectors than rows")
    rows = []
    for r in range(nu):
        row = [Fraction(0)] * nu_hat
        for col, w in zip(cols, lagrange_weights(mids, 0, c[r])):
            row[col] += w
        corr = corrections[r] if r < len(corrections) else None
        if corr is not None:
            if len(corr) != nu_hat:
                raise ValueError(f"correction for row {r + 1} must have {nu_hat} entries")
            row = [x + _frac(y) for x, y in zip(row, corr)]
        if sum(row) != c[r]:
            raise ValueError(f"row {r + 1} sums to {sum(row)}, expected {c[r]}")
        rows.append(tuple(row))
    return DvdTableau(nu, tuple(c), tuple(rows), order, name=name)


def _nullspace(c: list[list[Fraction]], e: list[Fraction]):
    """Particular solution and rational null-space basis of C v = e."""
    m = [row[:] + [rhs] for row, rhs in zip(c, e)]
    nrows, ncols = len(m), len(c[0])
    pivots = []
    r = 0
    for col in range(ncols):
        piv = next((k for k in range(r, nrows) if m[k][col] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        p = m[r][col]
        m[r] = [x / p for x in m[r]]
        for k in range(nrows):
            if k != r and m[k][col] != 0:
                f = m[k][col]
                m[k] = [x - f * y for x, y in zip(m[k], m[r])]
        pivots.append(col)
        r += 1
        if r == nrows:
            break
    free = [col for col in range(ncols) if col not in pivots]
    particular = [Fraction(0)] * ncols
    for k, col in enumerate(pivots):
        particular[col] = m[k][-1]
    basis = []
    for fcol in free:
        vec = [Fraction(0)] * ncols
        vec[fcol] = Fraction(1)
        for k, col in enumerate(pivots):
            vec[col] = -m[k][fcol]
        basis.append(vec)
    return particular, basis


def find_partition_vector(
    A: Sequence[Sequence],
    nu: int,
    tol: float = PSD_TOL,
    grid_points: int = 17,
    span: float = 2.0,
    max_denominator: int = 144,
) -> StabilityCertificate | None:
    """Search the unit-partition family for a vector with PSD certificate.

    The family is ``v = v_p + N t``.  A coarse rational grid over
    ``t in [-span, span]^d`` seeds a Nelder--Mead refinement of the smallest
    eigenvalue of B; the best point is rationalised and re-checked exactly
    on the family.  Returns ``None`` when no candidate clears ``-tol``.
    """
    a = [[_frac(x) for x in row] for row in A]
    c, e = unit_partition_system(nu)
    vp, basis = _nullspace(c, e)

    def v_of(t) -> list[Fraction]:
        return [p + sum(ti * b[k] for ti, b in zip(t, basis)) for k, p in enumerate(vp)]

    af = _to_float(a)
    vpf = np.array([float(x) for x in vp])
    nf = np.array([[float(x) for x in b] for b in basis]).reshape(len(basis), len(vp))

    def min_eig(t) -> float:
        v = vpf + np.asarray(t, dtype=float) @ nf
        dv = v[:, None] * af
        return float(np.linalg.eigvalsh(0.5 * (dv + dv.T))[0])

    candidates = []
    d = len(basis)
    if d == 0:
        candidates.append(())
    else:
        ticks = [Fraction(k, grid_points // 2).limit_denominator() * _frac(span)
                 for k in range(-(grid_points // 2), grid_points // 2 + 1)]
        scored = sorted(
            ((min_eig([float(x) for x in t]), t) for t in itertools.product(ticks, repeat=d)),
            key=lambda st: -st[0],
        )
        candidates.extend(t for _, t in scored[:3])
        for _, t0 in scored[:3]:
            res = optimize.minimize(
                lambda t: -min_eig(t), np.array([float(x) for x in t0]), method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000},
            )
            candidates.append(tuple(Fraction(float(x)).limit_denominator(max_denominator)
                                    for x in res.x))
    best = None
    for t in candidates:
        cert = build_certificate(a, v_of(t))
        if best is None or cert.min_eigenvalue > best.min_eigenvalue:
            best = cert
    if best is not None and best.min_eigenvalue >= -tol:
        return best
    return None


def dumps_tableau(tab: DvdTableau) -> str:
    lines = [f"{tab.nu} {tab.order}", " ".join(_tok(c) for c in tab.nodes)]
    lines += [" ".join(_tok(a) for a in row) for row in tab.rows]
    return "\n".join(lines) + "\n"


def _tok(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def loads_tableau(text: str, name: str = "") -> DvdTableau:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    try:
        nu, order = (int(x) for x in lines[0].split())
        nodes = tuple(_frac(x) for x in lines[1].split())
        rows = tuple(tuple(_frac(x) for x in ln.split()) for ln in lines[2:])
    except (IndexError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"malformed tableau text: {exc}") from exc
    return DvdTableau(nu, nodes, rows, order, name=name)


def read_tableau(path) -> DvdTableau:
    with open(path) as fh:
        return loads_tableau(fh.read(), name=str(path))


def write_tableau(tab: DvdTableau, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_tableau(tab))


def certify_builtin(name: str) -> StabilityCertificate:
    """Certificate of a shipped tableau with its reference partition vector."""
    tab = builtin_tableau(name)
    return build_certificate(expand_matrix(tab), BUILTIN_PARTITIONS[name])

