"""Finite-horizon MFG system on [0, T].

Coupled system (lambda_shift = 0 is the plain finite-horizon game):

    -du/dt + lambda_shift - lap(u) + H(x, Du) = F(x, m(t))
     dm/dt - lap(m) - div(m H_p(x, Du)) = 0
     m(0) = m0,   u(T) = terminal(m(T))

Discretization: backward Euler in time for both sweeps, implicit in the
diffusion, Hamiltonian evaluated at the already-known later time slice
(semi-implicit), Fokker-Planck in conservative face-flux form.  The coupled
system is solved by a damped Picard iteration on the m-path; monotone
couplings make the iteration contract.

A stationary triple (lambda, u, m) of the ergodic module is an exact fixed
point of these sweeps because both share the spatial operators of
`operators`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import model as model_mod
from .errors import NonConvergence, SolverError
from .grid import TorusGrid, as_field, gradient, validate_density
from .model import ModelSpec, hamiltonian_value
from .operators import (
    fp_step_diagonals_faces,
    neg_laplacian_matrix,
    solve_cyclic_tridiag,
)

__all__ = [
    "TimeGrid",
    "make_time_grid",
    "TerminalCondition",
    "MFGSolution",
    "SolverOptions",
    "hjb_backward_sweep",
    "fp_forward_sweep",
    "solve_mfg_finite",
    "duality_curve",
    "turnpike_distance_curve",
]

#: accuracy bound dt <= DT_FACTOR * h keeps the time error below the space error
DT_FACTOR = 0.25

#: per-step mass drift beyond this is a scheme bug, not a data problem
MASS_DRIFT_LIMIT = 1e-10

#: slice entries this far below zero indicate a broken M-matrix (huge drift)
NEGATIVITY_LIMIT = -1e-13


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] with nt steps, dt = T/nt."""

    T: float
    nt: int

    def __post_init__(self):
        if self.T <= 0 or self.nt < 1:
            raise ValueError("time grid needs T > 0 and nt >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    def check_against(self, g: TorusGrid, dt_factor: float = DT_FACTOR) -> None:
        if self.dt > dt_factor * g.h * (1.0 + 1e-12):
            raise ValueError(
                f"dt = {self.dt:.3e} violates the accuracy bound "
                f"{dt_factor} * h = {dt_factor * g.h:.3e}"
            )


def make_time_grid(g: TorusGrid, T: float, dt_factor: float = DT_FACTOR) -> TimeGrid:
    """Time grid for horizon T with the largest dt satisfying dt <= dt_factor*h."""
    nt = int(np.ceil(T / (dt_factor * g.h) - 1e-9))
    return TimeGrid(float(T), max(nt, 1))


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal data u(T): the coupling G, a fixed field, or a field of the measure."""

    kind: str  # coupling_G | fixed_field | field_of_measure
    payload: object = None

    @classmethod
    def coupling_g(cls) -> "TerminalCondition":
        return cls("coupling_G")

    @classmethod
    def fixed(cls, u_T) -> "TerminalCondition":
        return cls("fixed_field", np.asarray(u_T, dtype=float))

    @classmethod
    def of_measure(cls, fn: Callable[[np.ndarray], np.ndarray]) -> "TerminalCondition":
        return cls("field_of_measure", fn)

    def evaluate(self, spec: ModelSpec, m_T: np.ndarray) -> np.ndarray:
        if self.kind == "coupling_G":
            return model_mod.coupling_field(spec, "G", m_T)
        if self.kind == "fixed_field":
            return as_field(spec.grid, self.payload)
        if self.kind == "field_of_measure":
            return as_field(spec.grid, self.payload(m_T))
        raise ValueError(f"unknown terminal kind {self.kind!r}")

    @property
    def depends_on_measure(self) -> bool:
        return self.kind in ("coupling_G", "field_of_measure")


@dataclass
class SolverOptions:
    """Damped-Picard controls shared by the time-dependent solvers."""

    alpha: float = 0.5
    tol: float = 1e-8
    max_iter: int = 400
    # optional warm starts: a full m-path, or a frozen drift used to build one
    init_m_path: np.ndarray | None = None
    init_drift: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("damping alpha must lie in (0, 1]")

    def replace(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


@dataclass
class MFGSolution:
    """Converged (u, m) paths with solver diagnostics."""

    grid: TorusGrid
    tg: TimeGrid
    u_path: np.ndarray  # (nt+1, n)
    m_path: np.ndarray  # (nt+1, n)
    iterations: int
    final_residual: float
    converged: bool
    lambda_shift: float = 0.0
    extras: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        d = {"iterations": self.iterations,
             "final_residual": self.final_residual,
             "converged": self.converged}
        d.update(self.extras)
        return d


def _hjb_step_inverse(g: TorusGrid, inv_dt: float, delta: float) -> np.ndarray:
    """Inverse of (1/dt + delta) I + A; constant along a sweep, so precomputed."""
    m = neg_laplacian_matrix(g)
    np.fill_diagonal(m, m.diagonal() + inv_dt + delta)
    return np.linalg.inv(m)


def path_gradient(g: TorusGrid, path: np.ndarray) -> np.ndarray:
    """Centered spatial gradient of every time slice at once."""
    return (np.roll(path, -1, axis=1) - np.roll(path, 1, axis=1)) / (2.0 * g.h)


def _centered_diff(u: np.ndarray, inv2h: float) -> np.ndarray:
    # slicing beats np.roll in the per-step loops
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) * inv2h
    out[0] = (u[1] - u[-1]) * inv2h
    out[-1] = (u[0] - u[-2]) * inv2h
    return out


def _face_paths(g: TorusGrid, drift_path: np.ndarray):
    """Face-averaged drift at i+1/2 and i-1/2 for every slice at once."""
    bf = 0.5 * (drift_path + np.roll(drift_path, -1, axis=1))
    return bf, np.roll(bf, 1, axis=1)


def hjb_backward_sweep(spec: ModelSpec, tg: TimeGrid, m_path: np.ndarray,
                       terminal: TerminalCondition, lambda_shift: float = 0.0,
                       delta: float = 0.0) -> np.ndarray:
    """Backward value sweep against a frozen density path.

    Implicit in the Laplacian, Hamiltonian frozen at the gradient of the
    later slice; each step is one multiplication by the precomputed inverse
    of the cyclic tridiagonal step matrix.
    """
    g = spec.grid
    m_path = np.asarray(m_path, dtype=float)
    if m_path.shape != (tg.nt + 1, g.n):
        raise ValueError(f"m_path has shape {m_path.shape}, expected {(tg.nt + 1, g.n)}")
    inv_dt = 1.0 / tg.dt
    minv = _hjb_step_inverse(g, inv_dt, delta)
    cf = model_mod.coupling_matrix(spec, "F")
    f_path = m_path @ cf.T + spec.offset_f  # F(x, m_k) for every slice

    u = np.empty_like(m_path)
    u[tg.nt] = terminal.evaluate(spec, m_path[tg.nt])
    inv2h = 0.5 / g.h
    v_pot = spec.potential
    for k in range(tg.nt - 1, -1, -1):
        du_next = _centered_diff(u[k + 1], inv2h)
        rhs = u[k + 1] * inv_dt - (0.5 * du_next * du_next - v_pot) \
            - lambda_shift + f_path[k]
        u[k] = minv @ rhs
    return u


def _fp_step_faces(g: TorusGrid, bf: np.ndarray, bm: np.ndarray, inv_dt: float,
                   rhs: np.ndarray) -> np.ndarray:
    lower, diag, upper = fp_step_diagonals_faces(g, bf, bm, inv_dt)
    return solve_cyclic_tridiag(lower, diag, upper, rhs)


def _fp_step(g: TorusGrid, b_nodes: np.ndarray, inv_dt: float, rhs: np.ndarray) -> np.ndarray:
    bf = 0.5 * (b_nodes + np.roll(b_nodes, -1))
    return _fp_step_faces(g, bf, np.roll(bf, 1), inv_dt, rhs)


def fp_forward_sweep(spec: ModelSpec, tg: TimeGrid, u_path: np.ndarray,
                     m0: np.ndarray) -> np.ndarray:
    """Forward density sweep with drift H_p(x, Du) from a frozen value path.

    The step matrix is an M-matrix with column sums 1/dt, so each slice keeps
    unit mass and nonnegativity; a per-step assertion catches drift beyond
    roundoff before the slice is projected back onto the exact constraints.
    """
    g = spec.grid
    u_path = np.asarray(u_path, dtype=float)
    if u_path.shape != (tg.nt + 1, g.n):
        raise ValueError(f"u_path has shape {u_path.shape}, expected {(tg.nt + 1, g.n)}")
    m0 = validate_density(g, m0)
    inv_dt = 1.0 / tg.dt
    drift = path_gradient(g, u_path)  # H_p(x, Du) = Du for the quadratic family
    bf, bm = _face_paths(g, drift)

    m = np.empty_like(u_path)
    m[0] = m0
    for k in range(1, tg.nt + 1):
        mk = _fp_step_faces(g, bf[k], bm[k], inv_dt, m[k - 1] * inv_dt)
        total = g.h * mk.sum()
        if abs(total - 1.0) > MASS_DRIFT_LIMIT:
            raise SolverError(
                f"mass drift {total - 1.0:.3e} at step {k} exceeds {MASS_DRIFT_LIMIT}; "
                "conservative assembly is broken"
            )
        if mk.min() < NEGATIVITY_LIMIT:
            raise SolverError(
                f"negative density {mk.min():.3e} at step {k}; drift violates the "
                "M-matrix bound |H_p| <= 2/h"
            )
        np.clip(mk, 0.0, None, out=mk)
        mk /= g.h * mk.sum()
        m[k] = mk
    return m


def picard_mfg(spec: ModelSpec, tg: TimeGrid, m0: np.ndarray,
               terminal: TerminalCondition, lambda_shift: float,
               delta: float, opts: SolverOptions) -> MFGSolution:
    """Damped Picard iteration on the m-path; shared by the finite-horizon
    and discounted solvers (delta is the discount rate, 0 for finite horizon).
    """
    g = spec.grid
    tg.check_against(g)
    m0 = validate_density(g, m0)

    if opts.init_m_path is not None:
        m_path = np.array(opts.init_m_path, dtype=float)
        if m_path.shape != (tg.nt + 1, g.n):
            raise ValueError("init_m_path has the wrong shape")
    elif opts.init_drift is not None:
        # warm start: relax m0 under the frozen drift field (close to the
        # coupled answer whenever the value stays near its stationary profile)
        frozen = np.tile(as_field(g, opts.init_drift), (tg.nt + 1, 1))
        m_path = _sweep_with_drift(spec, tg, frozen, m0)
    else:
        m_path = np.tile(m0, (tg.nt + 1, 1))

    residual = np.inf
    for it in range(1, opts.max_iter + 1):
        u_path = hjb_backward_sweep(spec, tg, m_path, terminal, lambda_shift, delta)
        m_new = fp_forward_sweep(spec, tg, u_path, m0)
        residual = opts.alpha * float(np.max(np.abs(m_new - m_path)))
        m_path = (1.0 - opts.alpha) * m_path + opts.alpha * m_new
        if residual <= opts.tol:
            u_path = hjb_backward_sweep(spec, tg, m_path, terminal, lambda_shift, delta)
            return MFGSolution(g, tg, u_path, m_path, it, residual, True,
                               lambda_shift=lambda_shift)
    raise NonConvergence("MFG Picard iteration did not converge; lower alpha",
                         opts.max_iter, residual)


def _sweep_with_drift(spec: ModelSpec, tg: TimeGrid, drift_path: np.ndarray,
                      m0: np.ndarray) -> np.ndarray:
    """Forward sweep with an explicitly given drift path (warm starts, flows)."""
    g = spec.grid
    inv_dt = 1.0 / tg.dt
    bf, bm = _face_paths(g, drift_path)
    m = np.empty((tg.nt + 1, g.n))
    m[0] = validate_density(g, m0)
    for k in range(1, tg.nt + 1):
        mk = _fp_step_faces(g, bf[k], bm[k], inv_dt, m[k - 1] * inv_dt)
        np.clip(mk, 0.0, None, out=mk)
        mk /= g.h * mk.sum()
        m[k] = mk
    return m


def solve_mfg_finite(spec: ModelSpec, tg: TimeGrid, m0: np.ndarray,
                     terminal: TerminalCondition | None = None,
                     lambda_shift: float = 0.0,
                     opts: SolverOptions | None = None) -> MFGSolution:
    """Solve the finite-horizon MFG system by damped fixed point.

    Raises NonConvergence after max_iter sweeps; never silently returns an
    unconverged path.
    """
    if terminal is None:
        terminal = TerminalCondition.coupling_g()
    opts = opts or SolverOptions()
    return picard_mfg(spec, tg, m0, terminal, lambda_shift, 0.0, opts)


def duality_curve(sol1: MFGSolution, sol2: MFGSolution) -> np.ndarray:
    """t_k -> h * sum (u1-u2)(m1-m2); nonincreasing for monotone couplings.

    Returns an array of shape (nt+1, 2) with columns (t, pairing).
    """
    if sol1.u_path.shape != sol2.u_path.shape or sol1.tg != sol2.tg:
        raise ValueError("solutions live on different grids")
    h = sol1.grid.h
    pairing = h * np.sum((sol1.u_path - sol2.u_path) * (sol1.m_path - sol2.m_path), axis=1)
    return np.column_stack([sol1.tg.times, pairing])


def turnpike_distance_curve(sol: MFGSolution, erg) -> np.ndarray:
    """Per-slice sup distances to the ergodic solution.

    Returns (nt+1, 3) with columns (t, |m(t) - m_bar|_inf, |Du(t) - Du_bar|_inf).
    """
    g = sol.grid
    m_bar = as_field(g, erg.m_bar)
    du_bar = gradient(g, as_field(g, erg.u_bar))
    dist_m = np.max(np.abs(sol.m_path - m_bar), axis=1)
    dist_du = np.max(np.abs(path_gradient(g, sol.u_path) - du_bar), axis=1)
    return np.column_stack([sol.tg.times, dist_m, dist_du])
