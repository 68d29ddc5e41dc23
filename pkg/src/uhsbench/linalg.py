"""Preconditioned conjugate gradients for the SPD pressure system."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """PCG failed to reach the requested residual."""

    def __init__(self, iterations: int, rel_residual: float):
        self.iterations = iterations
        self.rel_residual = rel_residual
        super().__init__(
            f"PCG did not converge: rel residual {rel_residual:.3e} "
            f"after {iterations} iterations"
        )


@dataclass
class SolveInfo:
    iterations: int
    rel_residual: float


def solve_pcg(A, b: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-10,
              max_iter: int | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Solve the SPD system A x = b with Jacobi-preconditioned CG.

    Convergence criterion: true residual norm(A x - b) <= tol * norm(b).
    A may be any object supporting `A @ x` and `A.diagonal()` (scipy sparse
    or a dense array). Raises SolverError on non-convergence, reporting the
    iteration count and the residual reached.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if max_iter is None:
        max_iter = max(20 * n, 1000)
    norm_b = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if norm_b == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0)
    inv_diag = 1.0 / np.asarray(A.diagonal(), dtype=np.float64)
    r = b - A @ x
    rel = np.linalg.norm(r) / norm_b
    if rel <= tol:
        return x, SolveInfo(0, rel)
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / norm_b
        if rel <= tol:
            # the recurrence residual can drift; confirm with the true one
            true_rel = np.linalg.norm(b - A @ x) / norm_b
            if true_rel <= tol:
                return x, SolveInfo(it, true_rel)
            r = b - A @ x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(max_iter, rel)
