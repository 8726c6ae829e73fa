"""Linear solvers used inside the time steps.

Batched Thomas elimination for independent tridiagonal lines, matrix-free
conjugate gradients for SPD systems, and sparse forward/backward substitution
for the triangular factors of the alternating-triangle scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import TriangularSplit

__all__ = [
    "SolverReport",
    "SingularSystemError",
    "solve_tridiagonal_batch",
    "solve_spd",
    "solve_triangular",
]


class SingularSystemError(ValueError):
    """A direct solve hit a zero pivot / zero diagonal."""


@dataclass
class SolverReport:
    iterations: int
    residual_norm: float        # relative to the right-hand side
    converged: bool
    breakdown: bool = False     # CG met a non-positive curvature direction


def solve_tridiagonal_batch(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a batch of independent tridiagonal systems by Thomas elimination.

    All arguments are (m, n) arrays, one row per line:
        lower[:, k] x_{k-1} + diag[:, k] x_k + upper[:, k] x_{k+1} = rhs[:, k]
    lower[:, 0] and upper[:, -1] are ignored.  Lines are eliminated in
    lockstep (vectorized over the batch), which is bitwise deterministic
    regardless of how callers group the lines.
    """
    a = np.atleast_2d(np.asarray(lower, dtype=float))
    b = np.atleast_2d(np.asarray(diag, dtype=float)).copy()
    c = np.atleast_2d(np.asarray(upper, dtype=float))
    d = np.atleast_2d(np.asarray(rhs, dtype=float)).copy()
    if not (a.shape == b.shape == c.shape == d.shape):
        raise ValueError("lower/diag/upper/rhs must have matching shapes")
    m, n = b.shape
    for k in range(1, n):
        piv = b[:, k - 1]
        if np.any(piv == 0.0):
            raise SingularSystemError(f"zero pivot at position {k - 1} of a tridiagonal line")
        w = a[:, k] / piv
        b[:, k] -= w * c[:, k - 1]
        d[:, k] -= w * d[:, k - 1]
    if np.any(b[:, -1] == 0.0):
        raise SingularSystemError(f"zero pivot at position {n - 1} of a tridiagonal line")
    x = np.empty_like(d)
    x[:, -1] = d[:, -1] / b[:, -1]
    for k in range(n - 2, -1, -1):
        x[:, k] = (d[:, k] - c[:, k] * x[:, k + 1]) / b[:, k]
    return x


def solve_spd(apply_op, rhs, tol: float = 1e-10, max_iter: int | None = None):
    """Conjugate gradients for a self-adjoint positive definite operator.

    apply_op maps a flat vector to a flat vector.  Returns (x, SolverReport);
    the reported residual is the true relative residual ||b - Ax|| / ||b||,
    re-evaluated (and the iteration restarted) if the recurrence residual has
    drifted.  Non-positive curvature stops the iteration with breakdown=True
    and converged=False; the caller decides what to do.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.size
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolverReport(0, 0.0, True)
    if max_iter is None:
        max_iter = max(20 * n, 200)

    x = np.zeros_like(b)
    total_it = 0
    for _restart in range(3):
        r = b - (apply_op(x) if total_it else np.zeros_like(b))
        rs = float(r @ r)
        if math.sqrt(rs) <= tol * bnorm:
            return x, SolverReport(total_it, math.sqrt(rs) / bnorm, True)
        p = r.copy()
        while total_it < max_iter:
            ap = apply_op(p)
            pap = float(p @ ap)
            if pap <= 0.0:
                return x, SolverReport(total_it, math.sqrt(rs) / bnorm, False, breakdown=True)
            alpha = rs / pap
            x = x + alpha * p
            r = r - alpha * ap
            rs_new = float(r @ r)
            total_it += 1
            if math.sqrt(rs_new) <= tol * bnorm:
                true_r = b - apply_op(x)
                true_norm = float(np.linalg.norm(true_r))
                if true_norm <= tol * bnorm:
                    return x, SolverReport(total_it, true_norm / bnorm, True)
                break   # recurrence drifted; restart from the true residual
            p = r + (rs_new / rs) * p
            rs = rs_new
        else:
            break
    true_norm = float(np.linalg.norm(b - apply_op(x)))
    return x, SolverReport(total_it, true_norm / bnorm, true_norm <= tol * bnorm)


def solve_triangular(split: TriangularSplit, which: str, c_diag: np.ndarray,
                     sigma_tau: float, rhs: np.ndarray) -> np.ndarray:
    """Exact substitution for (C + sigma*tau*R_i) z = rhs with diagonal C.

    which = "lower" uses R1 (forward substitution), "upper" uses R2
    (backward substitution).  C must be the global diagonal vector of the
    inverse coefficient operator, which exists only for k12 = 0.
    """
    if which not in ("lower", "upper"):
        raise ValueError(f"which must be 'lower' or 'upper', got {which!r}")
    c_diag = np.asarray(c_diag, dtype=float)
    if c_diag.ndim != 1 or c_diag.size != split.grid.num_flux:
        raise ValueError("triangular solve requires diagonal C (k12 = 0)")
    tri = split.R1 if which == "lower" else split.R2
    m = (sp.diags(c_diag) + sigma_tau * tri).tocsr()
    if np.any(m.diagonal() == 0.0):
        raise SingularSystemError("zero diagonal entry in triangular factor")
    return spla.spsolve_triangular(m, np.asarray(rhs, dtype=float), lower=(which == "lower"))
