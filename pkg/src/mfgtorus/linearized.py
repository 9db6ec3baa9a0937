"""Linearized MFG systems around converged base solutions.

Around a finite-horizon base (u, m) the system is

    -dv/dt + delta v - lap(v) + H_p(x, Du) . Dv = dF/dm(mu(t))
     dmu/dt - lap(mu) - div(mu H_p(x, Du)) - div(m H_pp Dv) = 0
     mu(0) = mu0,   v(T) = dG/dm(mu(T))   (or 0)

with delta = 0 for the plain finite-horizon case.  The sweeps below are the
exact Frechet derivatives of the nonlinear sweeps in `finite_horizon`: same
time staggering, same gradient lag, same face averaging.  That exactness is
what makes the Gateaux finite-difference check converge at first order all
the way down.

The linearized *ergodic* system (which selects the constant theta) is a
single bordered linear solve in the unknowns (v, mu, theta); the
delta-discounted route delta<v^delta> -> theta is kept as a consistency
check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discounted import DiscountedSolution
from .errors import NonConvergence
from .finite_horizon import (
    MFGSolution,
    SolverOptions,
    TerminalCondition,
    TimeGrid,
    _centered_diff,
    _face_paths,
    _fp_step_faces,
    path_gradient,
    solve_mfg_finite,
)
from .grid import TorusGrid, as_field, average, linf_norm, validate_centered, validate_density
from .model import ModelSpec, coupling_matrix
from .operators import (
    face_average,
    fp_divergence_matrix,
    fp_operator_matrix,
    gradient_matrix,
    neg_laplacian_matrix,
    transport_matrix,
)

__all__ = [
    "LinearizedSolution",
    "LinearizedErgodic",
    "solve_linearized_finite",
    "solve_linearized_discounted",
    "solve_linearized_ergodic",
    "gateaux_consistency_check",
    "GateauxReport",
]

TERMINAL_MODES = ("dG_dm", "zero")


@dataclass
class LinearizedSolution:
    grid: TorusGrid
    tg: TimeGrid
    v_path: np.ndarray
    mu_path: np.ndarray
    iterations: int
    final_residual: float
    converged: bool


@dataclass
class LinearizedErgodic:
    """(theta, v, mu) solving the linearized ergodic system with
    <v> = 0 and h*sum(mu) = 0."""

    theta_bar: float
    v_bar: np.ndarray
    mu_bar: np.ndarray
    residuals: tuple  # (v-equation, mu-equation) sup-norm residuals
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_bar": self.theta_bar,
            "v_bar": self.v_bar.tolist(),
            "mu_bar": self.mu_bar.tolist(),
            "residuals": list(self.residuals),
        }


def _linear_backward_sweep(spec, tg, drift_path, mu_path, terminal_field, delta):
    """Value sweep of the linearized system: transport by the frozen base
    drift (lagged one slice, like the nonlinear Hamiltonian), source
    dF/dm(mu_k)."""
    g = spec.grid
    inv_dt = 1.0 / tg.dt
    a_mat = neg_laplacian_matrix(g)
    np.fill_diagonal(a_mat, a_mat.diagonal() + inv_dt + delta)
    minv = np.linalg.inv(a_mat)
    cf = coupling_matrix(spec, "F")
    src = mu_path @ cf.T

    v = np.empty_like(mu_path)
    v[tg.nt] = terminal_field
    inv2h = 0.5 / g.h
    for k in range(tg.nt - 1, -1, -1):
        dv_next = _centered_diff(v[k + 1], inv2h)
        rhs = v[k + 1] * inv_dt - drift_path[k + 1] * dv_next + src[k]
        v[k] = minv @ rhs
    return v


def _linear_forward_sweep(spec, tg, drift_path, m_base_path, v_path, mu0):
    """Perturbation sweep: same M-matrix as the nonlinear density step, plus
    the divergence source div(m_base * H_pp * Dv) with H_pp = 1."""
    g = spec.grid
    inv_dt = 1.0 / tg.dt
    dv = path_gradient(g, v_path)
    bf, bm = _face_paths(g, drift_path)
    # face flux of the source div(m_base * H_pp * Dv), H_pp = 1
    flux = 0.5 * (m_base_path + np.roll(m_base_path, -1, axis=1)) \
        * 0.5 * (dv + np.roll(dv, -1, axis=1))
    source = (flux - np.roll(flux, 1, axis=1)) / g.h

    mu = np.empty_like(v_path)
    mu[0] = mu0
    for k in range(1, tg.nt + 1):
        mu[k] = _fp_step_faces(g, bf[k], bm[k], inv_dt,
                               mu[k - 1] * inv_dt + source[k])
    return mu


def _picard_linearized(spec, tg, drift_path, m_base_path, mu0, terminal_of_mu,
                       delta, opts: SolverOptions) -> LinearizedSolution:
    g = spec.grid
    mu0 = validate_centered(g, mu0)
    scale = linf_norm(g, mu0)
    if scale == 0.0:
        zeros = np.zeros((tg.nt + 1, g.n))
        return LinearizedSolution(g, tg, zeros, zeros.copy(), 0, 0.0, True)

    mu_path = np.tile(mu0, (tg.nt + 1, 1))
    residual = np.inf
    for it in range(1, opts.max_iter + 1):
        v_path = _linear_backward_sweep(spec, tg, drift_path, mu_path,
                                        terminal_of_mu(mu_path[tg.nt]), delta)
        mu_new = _linear_forward_sweep(spec, tg, drift_path, m_base_path,
                                       v_path, mu0)
        residual = opts.alpha * float(np.max(np.abs(mu_new - mu_path)))
        mu_path = (1.0 - opts.alpha) * mu_path + opts.alpha * mu_new
        # relative threshold keeps the solve exactly homogeneous in mu0
        if residual <= opts.tol * scale:
            v_path = _linear_backward_sweep(spec, tg, drift_path, mu_path,
                                            terminal_of_mu(mu_path[tg.nt]), delta)
            return LinearizedSolution(g, tg, v_path, mu_path, it, residual, True)
    raise NonConvergence("linearized Picard iteration did not converge",
                         opts.max_iter, residual)


def solve_linearized_finite(spec: ModelSpec, base: MFGSolution, mu0,
                            terminal_mode: str = "dG_dm",
                            opts: SolverOptions | None = None) -> LinearizedSolution:
    """Linearize the finite-horizon system around a converged base solution."""
    if terminal_mode not in TERMINAL_MODES:
        raise ValueError(f"terminal_mode must be one of {TERMINAL_MODES}")
    if not base.converged:
        raise ValueError("base solution is not converged")
    opts = opts or SolverOptions()
    g = spec.grid
    drift = path_gradient(g, base.u_path)  # H_p(x, Du_base)
    if terminal_mode == "dG_dm":
        cg = coupling_matrix(spec, "G")
        terminal = lambda mu_T: cg @ mu_T
    else:
        terminal = lambda mu_T: np.zeros(g.n)
    return _picard_linearized(spec, base.tg, drift, base.m_path, mu0,
                              terminal, 0.0, opts)


def solve_linearized_discounted(spec: ModelSpec, base: DiscountedSolution, mu0,
                                delta: float | None = None,
                                opts: SolverOptions | None = None) -> LinearizedSolution:
    """Linearize the discounted system around a converged truncated base;
    the truncation terminal is v(T_trunc) = 0 (bounded-solution proxy)."""
    if not base.converged:
        raise ValueError("base solution is not converged")
    if delta is None:
        delta = base.delta
    elif abs(delta - base.delta) > 1e-14:
        raise ValueError("delta does not match the base solution")
    opts = opts or SolverOptions()
    g = spec.grid
    drift = path_gradient(g, base.u_path)
    terminal = lambda mu_T: np.zeros(g.n)
    return _picard_linearized(spec, base.tg, drift, base.m_path, mu0,
                              terminal, delta, opts)


def _ergodic_blocks(spec: ModelSpec, erg):
    g = spec.grid
    u_bar = as_field(g, erg.u_bar)
    m_bar = validate_density(g, erg.m_bar)
    d_mat = gradient_matrix(g)
    drift = d_mat @ u_bar
    hjb_lin = neg_laplacian_matrix(g) + transport_matrix(g, drift)  # A + Hp.D
    cf = coupling_matrix(spec, "F")
    l_fp = fp_operator_matrix(g, drift)
    s_mat = fp_divergence_matrix(g, face_average(m_bar)) @ d_mat  # v -> div(m Dv)
    return u_bar, hjb_lin, cf, l_fp, s_mat


def solve_linearized_ergodic(spec: ModelSpec, erg,
                             check_deltas: tuple = (0.1, 0.05, 0.025)
                             ) -> LinearizedErgodic:
    """Solve the linearized ergodic system as one bordered linear system.

    Unknowns (v, mu, theta) plus a slack multiplier on the (rank-deficient)
    mu equation; constraints <v> = 0 and h*sum(mu) = 0 close the system.
    When check_deltas is nonempty the delta-discounted route is solved as
    well and the extrapolated limit of delta<v^delta> is stored in extras.
    """
    g = spec.grid
    n = g.n
    u_bar, hjb_lin, cf, l_fp, s_mat = _ergodic_blocks(spec, erg)

    full = np.zeros((2 * n + 2, 2 * n + 2))
    rhs = np.zeros(2 * n + 2)
    # v-equation: (A + Hp.D) v - dF/dm mu + theta = -u_bar
    full[:n, :n] = hjb_lin
    full[:n, n:2 * n] = -cf
    full[:n, 2 * n] = 1.0
    rhs[:n] = -u_bar
    # mu-equation: -div(m Dv) + L_fp mu + slack = 0
    full[n:2 * n, :n] = -s_mat
    full[n:2 * n, n:2 * n] = l_fp
    full[n:2 * n, 2 * n + 1] = 1.0
    # constraints
    full[2 * n, :n] = g.h
    full[2 * n + 1, n:2 * n] = g.h
    try:
        sol = np.linalg.solve(full, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"singular linearized-ergodic assembly: {exc}",
                             0, np.inf) from None
    v_bar, mu_bar, theta, slack = sol[:n], sol[n:2 * n], sol[2 * n], sol[2 * n + 1]
    if abs(slack) > 1e-8:
        raise NonConvergence("linearized-ergodic slack did not vanish", 0, abs(slack))

    res_v = linf_norm(g, u_bar + theta + hjb_lin @ v_bar - cf @ mu_bar)
    res_mu = linf_norm(g, l_fp @ mu_bar - s_mat @ v_bar)
    out = LinearizedErgodic(float(theta), v_bar, mu_bar, (res_v, res_mu))

    if check_deltas:
        seq = [(d, _discounted_linear_average(spec, erg, d)) for d in check_deltas]
        deltas = np.array([d for d, _ in seq])
        vals = np.array([v for _, v in seq])
        # delta<v^delta> -> theta linearly in delta; take the fitted intercept
        theta_disc = float(np.polyfit(deltas, vals, 1)[1])
        out.extras["delta_route"] = {"deltas": deltas.tolist(),
                                     "delta_v_avg": vals.tolist(),
                                     "theta_extrapolated": theta_disc}
    return out


def _discounted_linear_average(spec: ModelSpec, erg, delta: float) -> float:
    """Solve the delta-discounted linearized ergodic system; return delta<v>."""
    g = spec.grid
    n = g.n
    u_bar, hjb_lin, cf, l_fp, s_mat = _ergodic_blocks(spec, erg)
    full = np.zeros((2 * n + 1, 2 * n + 1))
    rhs = np.zeros(2 * n + 1)
    full[:n, :n] = hjb_lin + delta * np.eye(n)
    full[:n, n:2 * n] = -cf
    rhs[:n] = -u_bar
    full[n:2 * n, :n] = -s_mat
    full[n:2 * n, n:2 * n] = l_fp
    full[n:2 * n, 2 * n] = 1.0
    full[2 * n, n:2 * n] = g.h
    sol = np.linalg.solve(full, rhs)
    return delta * average(g, sol[:n])


@dataclass
class GateauxReport:
    eps: np.ndarray
    errors: np.ndarray
    slope: float

    def to_dict(self) -> dict:
        return {"eps": self.eps.tolist(), "errors": self.errors.tolist(),
                "slope": self.slope}


def gateaux_consistency_check(spec: ModelSpec, tg: TimeGrid, m0, mu0,
                              eps_list=(1e-2, 5e-3, 2.5e-3),
                              opts: SolverOptions | None = None) -> GateauxReport:
    """Compare the linearized value response with finite differences of the
    nonlinear solver:  err(eps) = | (u^{m0+eps mu0}(0) - u^{m0}(0))/eps - v(0) |.

    The remainder of a smooth map is quadratic, so log err vs log eps has
    slope 1 when the linearized solver is the exact derivative.
    """
    g = spec.grid
    m0 = validate_density(g, m0)
    mu0 = validate_centered(g, mu0)
    opts = opts or SolverOptions(tol=1e-12)

    base = solve_mfg_finite(spec, tg, m0, TerminalCondition.coupling_g(), opts=opts)
    lin = solve_linearized_finite(spec, base, mu0, "dG_dm", opts)
    v0 = lin.v_path[0]

    errors = []
    for eps in eps_list:
        perturbed = m0 + eps * mu0
        if perturbed.min() < 0.0:
            raise ValueError(f"m0 + {eps} * mu0 is not a valid density")
        perturbed /= g.h * perturbed.sum()  # exact by centering; guards roundoff
        sol = solve_mfg_finite(spec, tg, perturbed,
                               TerminalCondition.coupling_g(), opts=opts)
        diff = (sol.u_path[0] - base.u_path[0]) / eps
        errors.append(linf_norm(g, diff - v0))
    eps_arr = np.asarray(list(eps_list), dtype=float)
    err_arr = np.asarray(errors)
    if np.all(err_arr > 0.0):
        slope = float(np.polyfit(np.log(eps_arr), np.log(err_arr), 1)[0])
    else:
        slope = 0.0  # degenerate (identically zero response)
    return GateauxReport(eps_arr, err_arr, slope)
