"""Inexact Newton with backtracking, restarted right-preconditioned GMRES and
an overlapping block (additive Schwarz) preconditioner."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.linalg import LinearOperator, aslinearoperator

__all__ = [
    "NewtonConfig",
    "KrylovConfig",
    "KrylovInfo",
    "NewtonInfo",
    "ConvergenceError",
    "gmres",
    "newton",
    "block_preconditioner",
    "LINEAR_KRYLOV",
    "NEWTON_KRYLOV",
]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """A solver ran out of iterations; ``info`` carries the diagnostics."""

    def __init__(self, message: str, info=None):
        super().__init__(message)
        self.info = info


@dataclass(frozen=True)
class NewtonConfig:
    eps_rel: float = 1e-12
    eps_abs: float = 1e-12
    eps_step: float = 1e-12
    max_iters: int = 50
    linesearch: bool = True
    c1: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 20

    def __post_init__(self):
        if not (self.eps_rel > 0 and self.eps_abs > 0):
            raise ValueError("Newton tolerances must be positive")
        if not (0 < self.c1 < 1 and 0 < self.shrink < 1):
            raise ValueError("line search needs 0 < c1 < 1 and 0 < shrink < 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class KrylovConfig:
    xi_rel: float = 1e-12
    xi_abs: float = 1e-12
    restart: int = 30
    max_iters: int = 600

    def __post_init__(self):
        if self.restart < 1 or self.max_iters < 1:
            raise ValueError("restart and max_iters must be positive")
        if not (self.xi_rel > 0 and self.xi_abs > 0):
            raise ValueError("Krylov tolerances must be positive")


# linear (relaxed) schemes
LINEAR_KRYLOV = KrylovConfig(xi_rel=1e-12, xi_abs=1e-12)
# correction equations inside Newton
NEWTON_KRYLOV = KrylovConfig(xi_rel=1e-10, xi_abs=1e-16)


@dataclass
class KrylovInfo:
    iterations: int
    converged: bool
    residual_norm: float
    target: float
    at_floor: bool = False


@dataclass
class NewtonInfo:
    iterations: int
    gmres_iterations: int
    residual_norm: float
    initial_norm: float
    converged: bool
    step_lengths: list
    reason: str = ""


def _as_operator(op, n: int | None = None) -> LinearOperator:
    if op is None:
        return spla.aslinearoperator(sp.identity(n))
    if callable(op) and not hasattr(op, "shape"):
        return LinearOperator((n, n), matvec=op, dtype=float)
    return aslinearoperator(op)


def gmres(op, rhs, precond=None, cfg: KrylovConfig = LINEAR_KRYLOV, x0=None, floor: float = 0.0):
    """Solve ``op x = rhs`` by restarted GMRES with right preconditioning.

    ``precond`` applies H^{-1}; the Krylov space is built for ``op H^{-1}``
    so the monitored residual is the true residual ``rhs - op x``.  Returns
    ``(x, KrylovInfo)``; success means ``||rhs - op x|| <= max(xi_rel ||rhs||,
    xi_abs)``.  On exhaustion the best iterate is returned with
    ``converged=False``.  A positive ``floor`` (the attainable residual in
    floating point, supplied by the caller) also stops the iteration; the
    result then has ``converged=False`` and ``at_floor=True``.
    """
    b = np.asarray(rhs, dtype=float).ravel()
    n = b.size
    A = _as_operator(op, n)
    M = _as_operator(precond, n)
    if A.shape != (n, n) or M.shape != (n, n):
        raise ValueError("operator, preconditioner and right-hand side dimensions differ")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).ravel()
    target = max(cfg.xi_rel * np.linalg.norm(b), cfg.xi_abs)
    stop = max(target, floor)
    r = b - A.matvec(x) if x.any() else b.copy()
    beta = np.linalg.norm(r)
    its = 0
    m = cfg.restart
    while True:
        if beta <= stop or its >= cfg.max_iters:
            return x, KrylovInfo(its, bool(beta <= target), float(beta), float(target),
                                 bool(beta <= floor))
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        while k < m and its < cfg.max_iters:
            w = A.matvec(M.matvec(V[k]))
            its += 1
            for i in range(k + 1):
                H[i, k] = V[i] @ w
                w = w - H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                k += 1
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            breakdown = H[k + 1, k] <= 1e-14 * denom
            if not breakdown:
                V[k + 1] = w / H[k + 1, k]
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k += 1
            if abs(g[k]) <= stop or breakdown:
                break
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        x = x + M.matvec(V[:k].T @ y)
        r = b - A.matvec(x)
        new_beta = np.linalg.norm(r)
        if k == 0 or (new_beta >= beta and abs(g[k]) > stop):
            # no progress possible from this restart
            return x, KrylovInfo(its, bool(new_beta <= target), float(new_beta), float(target),
                                 bool(new_beta <= floor))
        beta = new_beta


def newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian_apply: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0,
    ncfg: NewtonConfig = NewtonConfig(),
    kcfg: KrylovConfig = NEWTON_KRYLOV,
    precond_factory: Callable[[np.ndarray], object] | None = None,
):
    """Inexact Newton: solve J S = -F by GMRES, update x + lambda S.

    Stops when ``||F(x)|| <= max(eps_rel ||F(x0)||, eps_abs)``, or when the
    accepted correction is below ``eps_step ||x||`` (the residual has hit
    its rounding floor; ``info.reason`` records which test fired).  ``lambda``
    is halved until the Armijo-type decrease ``||F(x + lambda S)|| <=
    (1 - c1 lambda) ||F(x)||`` holds.  The preconditioner is built once,
    from the initial iterate.  Raises :class:`ConvergenceError` when
    ``max_iters`` is exhausted or the line search cannot reduce ``||F||``.
    """
    x = np.array(x0, dtype=float).ravel()
    n = x.size
    F = residual(x)
    fnorm = f0 = float(np.linalg.norm(F))
    target = max(ncfg.eps_rel * f0, ncfg.eps_abs)
    precond = precond_factory(x) if precond_factory is not None else None
    info = NewtonInfo(0, 0, fnorm, f0, fnorm <= target, [], "residual" if fnorm <= target else "")
    while not info.converged:
        if info.iterations >= ncfg.max_iters:
            raise ConvergenceError(
                f"Newton did not converge in {ncfg.max_iters} iterations (|F| = {fnorm:.3e})", info)
        xk = x
        J = LinearOperator((n, n), matvec=lambda d, xk=xk: jacobian_apply(xk, d), dtype=float)
        S, kinfo = gmres(J, -F, precond, kcfg)
        info.gmres_iterations += kinfo.iterations
        lam = 1.0
        x_new = x + S
        F_new = residual(x_new)
        fn_new = float(np.linalg.norm(F_new))
        if ncfg.linesearch:
            halvings = 0
            while fn_new > (1.0 - ncfg.c1 * lam) * fnorm and halvings < ncfg.max_halvings:
                lam *= ncfg.shrink
                halvings += 1
                x_new = x + lam * S
                F_new = residual(x_new)
                fn_new = float(np.linalg.norm(F_new))
            if fn_new > fnorm:
                info.residual_norm = fnorm
                raise ConvergenceError(
                    f"line search failed to reduce |F| = {fnorm:.3e}", info)
        x, F, fnorm = x_new, F_new, fn_new
        info.iterations += 1
        info.step_lengths.append(lam)
        info.residual_norm = fnorm
        info.converged = fnorm <= target
        if info.converged:
            info.reason = "residual"
        elif np.linalg.norm(lam * S) <= ncfg.eps_step * np.linalg.norm(x):
            # correction at rounding level: |F| sits on its floating-point floor
            info.converged = True
            info.reason = "step"
        log.debug("newton it %d |F| = %.3e lambda = %g gmres %d", info.iterations, fnorm, lam,
                  kinfo.iterations)
    return x, info


def block_preconditioner(matrix, block: int | None = None, overlap: int = 0) -> LinearOperator:
    """Additive Schwarz inverse of ``matrix`` over contiguous index blocks.

    Blocks of ``block`` unknowns (``None`` or ``0``: one block = exact LU)
    are extended by ``overlap`` unknowns on each side, factorised, and their
    local solutions summed.  ``overlap=0`` gives block Jacobi.
    """
    A = sp.csc_matrix(matrix)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("preconditioner matrix must be square")
    block = n if not block else int(block)
    if block < 1 or overlap < 0:
        raise ValueError("block must be positive and overlap nonnegative")
    pieces = []
    for start in range(0, n, block):
        lo = max(start - overlap, 0)
        hi = min(start + block + overlap, n)
        sub = A[lo:hi, lo:hi].tocsc()
        try:
            lu = spla.splu(sub)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular preconditioner block [{lo}, {hi}): {exc}") from exc
        pieces.append((lo, hi, lu))

    def apply(r):
        r = np.asarray(r, dtype=float).ravel()
        if len(pieces) == 1:
            return pieces[0][2].solve(r)
        out = np.zeros(n)
        for lo, hi, lu in pieces:
            out[lo:hi] += lu.solve(r[lo:hi])
        return out

    return LinearOperator((n, n), matvec=apply, dtype=float)
