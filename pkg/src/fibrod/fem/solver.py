"""Symmetric positive definite sparse solves.

Direct path: SuperLU with symmetric ordering and diagonal pivoting, which
for an SPD matrix is an LDL^T-like factorization; a non-positive pivot or
an off-diagonal pivot choice is reported as indefinite. Iterative path:
conjugate gradients preconditioned by smoothed-aggregation AMG (rigid body
modes as near-nullspace) or Jacobi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    """Failed solve; ``history`` holds relative residuals when available."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0
    history: list[float] = field(default_factory=list)


class SPDFactor:
    """Reusable factorization for repeated right-hand sides."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise SolverError("indefinite matrix: off-diagonal pivoting occurred")
        piv = lu.U.diagonal()
        if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
            raise SolverError(f"matrix is not positive definite (min pivot {piv.min():.3e})")
        self._lu = lu

    def solve(self, b: np.ndarray, tol: float = 1e-10, refine: int = 3) -> tuple[np.ndarray, float]:
        if self.n == 0:
            return np.zeros_like(b), 0.0
        x = self._lu.solve(b)
        bn = np.linalg.norm(b, axis=0)
        if np.all(bn == 0):
            return np.zeros_like(b), 0.0
        bn = np.where(bn == 0, 1.0, bn)
        for _ in range(refine):
            r = b - self.A @ x
            rel = np.max(np.linalg.norm(r, axis=0) / bn)
            if rel <= 1e-3 * tol:
                break
            x = x + self._lu.solve(r)
        rel = float(np.max(np.linalg.norm(b - self.A @ x, axis=0) / bn))
        return x, rel


def rigid_body_modes(points: np.ndarray, ncomp: int = 3) -> np.ndarray:
    """Translations and infinitesimal rotations on node-major 3-component DOFs."""
    n = len(points)
    x = np.zeros((n, 3))
    x[:, : points.shape[1]] = points
    B = np.zeros((n, 3, 6))
    for c in range(3):
        B[:, c, c] = 1.0
    B[:, 1, 3], B[:, 2, 3] = -x[:, 2], x[:, 1]
    B[:, 0, 4], B[:, 2, 4] = x[:, 2], -x[:, 0]
    B[:, 0, 5], B[:, 1, 5] = -x[:, 1], x[:, 0]
    return B.reshape(n * 3, 6)


def solve_spd(
    A: sp.spmatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    method: str = "auto",
    near_nullspace: np.ndarray | None = None,
    maxiter: int = 20000,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = b`` for SPD ``A`` to relative residual ``tol``.

    ``method`` is ``direct``, ``cg-amg``, ``cg-jacobi`` or ``auto`` (direct
    below :data:`DIRECT_LIMIT` unknowns).
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "cg-amg"
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(method, 0.0)
    if method == "direct":
        fac = SPDFactor(A)
        x, rel = fac.solve(b, tol)
        if rel > tol:
            raise SolverError(f"direct solve residual {rel:.3e} exceeds tolerance {tol:.1e}", [rel])
        return x, SolveInfo("direct", rel)
    if method not in ("cg-amg", "cg-jacobi"):
        raise ValueError(f"unknown solve method {method!r}")

    if method == "cg-amg":
        import pyamg

        B = near_nullspace if near_nullspace is not None else np.ones((n, 1))
        ml = pyamg.smoothed_aggregation_solver(A, B=B)
        M = ml.aspreconditioner(cycle="V")
    else:
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("matrix has non-positive diagonal entries")
        M = sp.diags(1.0 / d)

    history: list[float] = []

    def cb(xk):
        history.append(float(np.linalg.norm(b - A @ xk)) / bnorm)

    x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    rel = float(np.linalg.norm(b - A @ x)) / bnorm
    if info != 0 or rel > tol * 1.0001:
        raise SolverError(f"CG did not converge (info={info}, residual {rel:.3e})", history)
    return x, SolveInfo(method, rel, len(history), history)
