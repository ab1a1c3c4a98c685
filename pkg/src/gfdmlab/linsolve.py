"""Iterative linear solves with an explicit residual contract.

The solver contract is only the relative residual ||Ax - b|| / ||b|| <= eps
within an iteration cap; the implementation is preconditioned BiCGSTAB with
a true-residual check at acceptance (the recurrence residual may drift).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gfdmlab.errors import DivergedIteration

DEFAULT_MAX_ITER = 10_000


class JacobiPreconditioner:
    def __init__(self, A: sp.csr_matrix):
        d = A.diagonal()
        d = np.where(np.abs(d) > 1e-300, d, 1.0)
        self._inv = 1.0 / d

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._inv * r


class ILUPreconditioner:
    """Incomplete-LU preconditioner on the row-equilibrated matrix;
    falls back to Jacobi if the factorization fails."""

    def __init__(self, A: sp.csr_matrix, drop_tol: float = 1e-5, fill_factor: float = 12.0):
        self._fallback = None
        self._ilu = None
        d = A.diagonal()
        scale = np.where(np.abs(d) > 1e-300, 1.0 / np.abs(d), 1.0)
        self._scale = scale
        try:
            Aeq = sp.diags(scale) @ A
            self._ilu = spla.spilu(Aeq.tocsc(), drop_tol=drop_tol, fill_factor=fill_factor)
        except Exception:
            self._fallback = JacobiPreconditioner(A)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self._ilu is not None:
            return self._ilu.solve(self._scale * r)
        return self._fallback(r)


class RecycledILU:
    """ILU preconditioner recycled across a slowly-changing family of
    systems whose rows correspond to points in space.

    The expensive factorization runs rarely; stale factors are applied
    through nearest-point maps between the factorization-time cloud and the
    current cloud (scatter-mean restriction, gather prolongation). Callers
    report iteration counts; degraded counts schedule a refresh at the next
    bind.
    """

    def __init__(self, drop_tol: float = 1e-4, fill_factor: float = 10.0,
                 refresh_iters: int = 35):
        self.drop_tol = drop_tol
        self.fill_factor = fill_factor
        self.refresh_iters = refresh_iters
        self._ilu = None
        self._tree = None
        self._stale = True
        self._mapping = None
        self._counts = None
        self._diag = None
        self._n_old = 0

    def bind(self, A: sp.csr_matrix, pos: np.ndarray) -> None:
        """Attach the current system; pos are the row point positions."""
        from scipy.spatial import cKDTree

        d = A.diagonal()
        self._diag = np.where(np.abs(d) > 1e-300, d, 1.0)
        if self._ilu is None or self._stale:
            try:
                self._ilu = spla.spilu(A.tocsc(), drop_tol=self.drop_tol,
                                       fill_factor=self.fill_factor)
                self._tree = cKDTree(pos)
                self._n_old = A.shape[0]
                self._mapping = np.arange(A.shape[0])
                self._counts = np.ones(A.shape[0])
                self._stale = False
            except Exception:
                self._ilu = None  # diagonal fallback until the next refresh
                self._stale = False
            return
        _, mapping = self._tree.query(pos)
        self._mapping = mapping
        counts = np.zeros(self._n_old)
        np.add.at(counts, mapping, 1.0)
        self._counts = np.maximum(counts, 1.0)

    def note_iterations(self, iterations: int) -> None:
        if iterations > self.refresh_iters:
            self._stale = True

    def force_refresh(self) -> None:
        self._stale = True

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self._ilu is None:
            return r / self._diag
        r_old = np.zeros(self._n_old)
        np.add.at(r_old, self._mapping, r)
        r_old /= self._counts
        return self._ilu.solve(r_old)[self._mapping]


def conjugate_gradient(
    A: sp.csr_matrix,
    b: np.ndarray,
    eps: float,
    x0: np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    preconditioner=None,
) -> tuple[np.ndarray, int]:
    """Preconditioned CG for SPD systems; same residual contract as
    solve_linear_fixed_point."""
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    M = preconditioner if preconditioner is not None else JacobiPreconditioner(A)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    tol = eps * bnorm
    if float(np.linalg.norm(r)) <= tol:
        return x, 0
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0 or not np.isfinite(pAp):
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if float(np.linalg.norm(r)) <= tol:
            true_r = float(np.linalg.norm(b - A @ x))
            if true_r <= tol:
                return x, it
            r = b - A @ x
        z = M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    final = float(np.linalg.norm(b - A @ x)) / bnorm
    raise DivergedIteration(
        f"CG did not reach {eps:g} within {max_iter} iterations "
        f"(relative residual {final:.3e})",
        residual=final,
        iterations=max_iter,
    )


def solve_linear_fixed_point(
    A: sp.csr_matrix,
    b: np.ndarray,
    eps: float,
    x0: np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    preconditioner=None,
) -> tuple[np.ndarray, int]:
    """Solve A x = b to relative residual <= eps.

    Returns (x, iterations). Raises DivergedIteration (carrying the final
    residual) when the cap is hit first.
    """
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    M = preconditioner if preconditioner is not None else JacobiPreconditioner(A)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rnorm = float(np.linalg.norm(r))
    if rnorm <= eps * bnorm:
        return x, 0

    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    tol = eps * bnorm
    blowup = 1e8 * max(bnorm, rnorm)
    for it in range(1, max_iter + 1):
        if not np.isfinite(rho) or float(np.linalg.norm(r)) > blowup:
            # a bad preconditioner can make BiCGSTAB diverge outright;
            # restart the solve with plain Jacobi before giving up
            if not isinstance(M, JacobiPreconditioner):
                return solve_linear_fixed_point(
                    A, b, eps, x0=x0, max_iter=max_iter,
                    preconditioner=JacobiPreconditioner(A),
                )
            break
        rho_new = float(r_hat @ r)
        if rho_new == 0.0 or omega == 0.0:
            # breakdown: restart from the current iterate
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            rho_new = float(r_hat @ r)
            if rho_new == 0.0:
                break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = M(p)
        v = A @ ph
        denom = float(r_hat @ v)
        if denom == 0.0:
            omega = 0.0
            continue
        alpha = rho / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) <= tol:
            x = x + alpha * ph
            true_r = float(np.linalg.norm(b - A @ x))
            if true_r <= tol:
                return x, it
            r = b - A @ x
            continue
        sh = M(s)
        t = A @ sh
        tt = float(t @ t)
        if tt == 0.0:
            omega = 0.0
            continue
        omega = float(t @ s) / tt
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        if float(np.linalg.norm(r)) <= tol:
            true_r = float(np.linalg.norm(b - A @ x))
            if true_r <= tol:
                return x, it
            r = b - A @ x

    final = float(np.linalg.norm(b - A @ x)) / bnorm
    raise DivergedIteration(
        f"no convergence to {eps:g} within {max_iter} iterations "
        f"(relative residual {final:.3e})",
        residual=final,
        iterations=max_iter,
    )
