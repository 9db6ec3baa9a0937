"""Shared discrete operators for the torus solvers.

Every solver in this package (finite-horizon, ergodic, discounted,
linearized) assembles its spatial terms through the helpers below, so the
time steppers, the stationary solvers and the linearizations all see exactly
the same matrices.  That shared assembly is what makes stationary solutions
exact fixed points of the sweeps and makes the linearized systems the exact
derivatives of the nonlinear ones.

The advection-diffusion step matrix

    M = (1/dt + delta) I + A - B(b),   A = -laplacian,  B(b) m = div(m b)

uses face-averaged m and b, is cyclic tridiagonal, has column sums
1/dt + delta exactly (mass conservation) and is an M-matrix whenever
|b| <= 2/h (nonnegativity).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.lapack import dgtsv

from .grid import TorusGrid, as_field

__all__ = [
    "neg_laplacian_matrix",
    "gradient_matrix",
    "transport_matrix",
    "face_average",
    "fp_divergence_matrix",
    "fp_operator_matrix",
    "fp_step_diagonals",
    "fp_step_diagonals_faces",
    "solve_cyclic_tridiag",
]


def neg_laplacian_matrix(g: TorusGrid) -> np.ndarray:
    """Dense A = -laplacian (symmetric positive semidefinite, kernel = constants)."""
    n, h = g.n, g.h
    a = np.zeros((n, n))
    idx = np.arange(n)
    a[idx, idx] = 2.0 / h**2
    a[idx, (idx + 1) % n] = -1.0 / h**2
    a[idx, (idx - 1) % n] = -1.0 / h**2
    return a


def gradient_matrix(g: TorusGrid) -> np.ndarray:
    """Dense centered-difference matrix D (skew-symmetric, kernel = constants)."""
    n, h = g.n, g.h
    d = np.zeros((n, n))
    idx = np.arange(n)
    d[idx, (idx + 1) % n] = 1.0 / (2.0 * h)
    d[idx, (idx - 1) % n] = -1.0 / (2.0 * h)
    return d


def transport_matrix(g: TorusGrid, b: np.ndarray) -> np.ndarray:
    """Dense matrix of v -> b * Dv (drift b given at nodes)."""
    return as_field(g, b)[:, None] * gradient_matrix(g)


def face_average(f: np.ndarray) -> np.ndarray:
    """Node field -> face field, entry i sits at x_{i+1/2}."""
    return 0.5 * (f + np.roll(f, -1))


def fp_divergence_matrix(g: TorusGrid, b_faces: np.ndarray) -> np.ndarray:
    """Dense B(b) with (B m)_i = (q_{i+1/2} - q_{i-1/2})/h, q = faceavg(m) * b.

    Columns sum to zero exactly, so A - B conserves h*sum(m).
    """
    n, h = g.n, g.h
    bf = as_field(g, b_faces)
    bm = np.roll(bf, 1)  # b at face i-1/2
    mat = np.zeros((n, n))
    idx = np.arange(n)
    mat[idx, (idx + 1) % n] = bf / (2.0 * h)
    mat[idx, idx] = (bf - bm) / (2.0 * h)
    mat[idx, (idx - 1) % n] = -bm / (2.0 * h)
    return mat


def fp_operator_matrix(g: TorusGrid, b_nodes: np.ndarray) -> np.ndarray:
    """Dense stationary Fokker-Planck operator L m = -lap(m) - div(m b)."""
    return neg_laplacian_matrix(g) - fp_divergence_matrix(g, face_average(b_nodes))


def fp_step_diagonals(g: TorusGrid, b_nodes: np.ndarray, inv_dt: float):
    """Diagonals of M = inv_dt*I + A - B(faceavg(b)) for a cyclic-tridiag solve.

    Returns (lower, diag, upper) where lower[i] = M[i, i-1] (lower[0] is the
    wrap entry M[0, n-1]) and upper[i] = M[i, i+1] (upper[n-1] wraps to
    M[n-1, 0]).
    """
    bf = face_average(as_field(g, b_nodes))  # b at face i+1/2
    return fp_step_diagonals_faces(g, bf, np.roll(bf, 1), inv_dt)


def fp_step_diagonals_faces(g: TorusGrid, bf: np.ndarray, bm: np.ndarray,
                            inv_dt: float):
    """fp_step_diagonals from precomputed face drifts bf (at i+1/2) and
    bm (at i-1/2); the time steppers hoist those out of the step loop."""
    h = g.h
    diag = inv_dt + 2.0 / h**2 - (bf - bm) / (2.0 * h)
    upper = -1.0 / h**2 - bf / (2.0 * h)
    lower = -1.0 / h**2 + bm / (2.0 * h)
    return lower, diag, upper


def solve_cyclic_tridiag(lower, diag, upper, rhs) -> np.ndarray:
    """Solve the cyclic tridiagonal system defined as in fp_step_diagonals.

    Sherman-Morrison reduction to a plain tridiagonal system: the two corner
    entries are folded into a rank-one update, so the cost is one LAPACK
    tridiagonal solve with two right-hand sides.
    """
    n = diag.shape[0]
    alpha = lower[0]  # M[0, n-1]
    beta = upper[-1]  # M[n-1, 0]
    gamma = -diag[0]

    d2 = diag.copy()
    d2[0] -= gamma
    d2[-1] -= alpha * beta / gamma

    b = np.zeros((n, 2))
    b[:, 0] = rhs
    b[0, 1] = gamma
    b[-1, 1] = beta

    _, _, _, sol, info = dgtsv(lower[1:], d2, upper[:-1], b,
                               overwrite_dl=True, overwrite_d=True,
                               overwrite_du=True, overwrite_b=True)
    if info != 0:
        raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
    y, q = sol[:, 0], sol[:, 1]
    # v = e_0 + (alpha/gamma) e_{n-1}
    vy = y[0] + alpha / gamma * y[-1]
    vq = q[0] + alpha / gamma * q[-1]
    return y - q * (vy / (1.0 + vq))
