"""Discounted infinite-horizon MFG system and its stationary version.

Stationary problem (no normalization: the delta-term already pins the
constant mode, and delta<u> must approach the ergodic constant):

    delta u - lap(u) + H(x, Du) = F(x, m)
    -lap(m) - div(m H_p(x, Du)) = 0,   h*sum(m) = 1.

Time-dependent problem, solved by horizon truncation with the stationary
value as terminal data (the exact solution approaches it exponentially, so
the terminal layer shrinks like exp(-gamma T_trunc)):

    -du/dt + delta u - lap(u) + H(x, Du) = F(x, m(t))
     dm/dt - lap(m) - div(m H_p(x, Du)) = 0
     m(0) = m0,  u(T_trunc) = u_stationary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ergodic import stationary_fp
from .errors import NonConvergence, TailSensitive
from .finite_horizon import (
    MFGSolution,
    SolverOptions,
    TerminalCondition,
    TimeGrid,
    make_time_grid,
    path_gradient,
    picard_mfg,
)
from .grid import as_field, gradient, linf_norm, validate_density
from .model import ModelSpec, coupling_field, hamiltonian_value
from .operators import gradient_matrix, neg_laplacian_matrix, transport_matrix

__all__ = [
    "DiscountedStationary",
    "DiscountedSolution",
    "StationaryOptions",
    "solve_discounted_stationary",
    "default_truncation_horizon",
    "solve_discounted_mfg",
    "discounted_decay_curve",
]

DELTA_MAX = 0.5
TRUNCATION_CAP = 200.0


@dataclass
class StationaryOptions:
    alpha: float = 0.5
    tol: float = 1e-10
    max_iter: int = 200
    newton_max_iter: int = 60
    init_u: np.ndarray | None = None


@dataclass
class DiscountedStationary:
    """Stationary discounted pair with residual diagnostics."""

    delta: float
    u_bar_delta: np.ndarray
    m_bar_delta: np.ndarray
    residuals: tuple
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "u_bar_delta": self.u_bar_delta.tolist(),
            "m_bar_delta": self.m_bar_delta.tolist(),
            "residuals": list(self.residuals),
        }


@dataclass
class DiscountedSolution(MFGSolution):
    """Truncated-horizon discounted solution; extras carry delta, T_trunc and
    the tail-insensitivity diagnostics when the check ran."""

    delta: float = 0.0

    def diagnostics(self) -> dict:
        d = super().diagnostics()
        d["delta"] = self.delta
        d["T_trunc"] = self.tg.T
        return d


def _stationary_hjb_newton(spec: ModelSpec, delta: float, f: np.ndarray,
                           u0: np.ndarray, opts: StationaryOptions) -> np.ndarray:
    """Newton for delta u - lap(u) + H(x, Du) = f; nonsingular for delta > 0.

    The value carries the large constant ~<f>/delta, so the iteration works
    in the centered variable w = u - <u> with the constant as an extra
    unknown; that keeps A @ w free of the O(|u|/h^2) cancellation and lets
    the residual reach roundoff level for small delta.
    """
    g = spec.grid
    n = g.n
    a_mat = neg_laplacian_matrix(g)
    d_mat = gradient_matrix(g)
    from .grid import average

    c = average(g, u0)
    w = u0 - c

    def residual(w, c):
        return delta * (w + c) + a_mat @ w + hamiltonian_value(spec, d_mat @ w) - f

    res = residual(w, c)
    norm = linf_norm(g, res)
    for it in range(opts.newton_max_iter):
        if norm <= opts.tol:
            return w + c
        full = np.zeros((n + 1, n + 1))
        full[:n, :n] = delta * np.eye(n) + a_mat + transport_matrix(g, d_mat @ w)
        full[:n, n] = delta
        full[n, :n] = g.h
        rhs = np.concatenate([-res, [-average(g, w)]])
        step = np.linalg.solve(full, rhs)
        # backtracking keeps the iteration safe far from the solution
        lam = 1.0
        for _ in range(40):
            w_try = w + lam * step[:n]
            c_try = c + lam * step[n]
            res_try = residual(w_try, c_try)
            norm_try = linf_norm(g, res_try)
            if norm_try < norm:
                w, c, res, norm = w_try, c_try, res_try, norm_try
                break
            lam *= 0.5
        else:
            raise NonConvergence("discounted HJB Newton line search failed", it, norm)
    raise NonConvergence("discounted HJB Newton stalled", opts.newton_max_iter, norm)


def solve_discounted_stationary(spec: ModelSpec, delta: float,
                                opts: StationaryOptions | None = None
                                ) -> DiscountedStationary:
    """Damped fixed point coupling the discounted HJB with the stationary FP."""
    if not 0.0 < delta <= DELTA_MAX:
        raise ValueError(f"delta must lie in (0, {DELTA_MAX}], got {delta}")
    g = spec.grid
    opts = opts or StationaryOptions()
    a_mat = neg_laplacian_matrix(g)
    d_mat = gradient_matrix(g)

    m = np.ones(g.n)
    if opts.init_u is not None:
        u = as_field(g, opts.init_u)
    else:
        f0 = coupling_field(spec, "F", m)
        u = np.full(g.n, float(np.mean(f0 + spec.potential)) / delta)

    for it in range(1, opts.max_iter + 1):
        f = coupling_field(spec, "F", m)
        u = _stationary_hjb_newton(spec, delta, f, u, opts)
        m_new = stationary_fp(spec, u)
        change = linf_norm(g, m_new - m)
        m = (1.0 - opts.alpha) * m + opts.alpha * m_new
        if opts.alpha * change <= opts.tol:
            m /= g.h * m.sum()
            u = _stationary_hjb_newton(spec, delta, coupling_field(spec, "F", m), u, opts)
            m = stationary_fp(spec, u)
            f = coupling_field(spec, "F", m)
            res_hjb = linf_norm(g, delta * u + a_mat @ u
                                + hamiltonian_value(spec, d_mat @ u) - f)
            from .operators import fp_operator_matrix

            res_fp = linf_norm(g, fp_operator_matrix(g, d_mat @ u) @ m)
            _check_value_bound(spec, delta, u, m)
            return DiscountedStationary(delta, u, m, (res_hjb, res_fp), iterations=it)
    raise NonConvergence("discounted stationary fixed point did not converge",
                         opts.max_iter, change)


def _check_value_bound(spec: ModelSpec, delta: float, u: np.ndarray,
                       m: np.ndarray) -> None:
    g = spec.grid
    bound = 10.0 * (linf_norm(g, hamiltonian_value(spec, np.zeros(g.n)))
                    + linf_norm(g, coupling_field(spec, "F", m)))
    if delta * linf_norm(g, u) > bound:
        raise NonConvergence(
            f"delta*|u| = {delta * linf_norm(g, u):.3e} exceeds the maximum-principle "
            f"bound {bound:.3e}", 0, delta * linf_norm(g, u))


def default_truncation_horizon(delta: float) -> float:
    """max(20, 5/delta), capped at 200 with a warning for very small delta."""
    t = max(20.0, 5.0 / delta)
    if t > TRUNCATION_CAP:
        warnings.warn(
            f"truncation horizon {t:.0f} for delta = {delta} capped at {TRUNCATION_CAP}; "
            "rely on the exponential turnpike to keep the tail small",
            stacklevel=2,
        )
        t = TRUNCATION_CAP
    return t


def solve_discounted_mfg(spec: ModelSpec, delta: float, m0: np.ndarray,
                         T_trunc: float | None = None,
                         opts: SolverOptions | None = None,
                         stationary: DiscountedStationary | None = None,
                         check_tail: bool = False,
                         tail_tol: float | None = None) -> DiscountedSolution:
    """Discounted MFG on [0, T_trunc] with terminal data u = u_bar_delta.

    With check_tail=True the solve is repeated on the doubled horizon and a
    TailSensitive error is raised if u(0,.) moves by more than tail_tol
    (default 10 * opts.tol); the measured gap is stored in the diagnostics.
    """
    if not 0.0 < delta <= DELTA_MAX:
        raise ValueError(f"delta must lie in (0, {DELTA_MAX}], got {delta}")
    g = spec.grid
    opts = opts or SolverOptions()
    if stationary is None:
        stationary = solve_discounted_stationary(
            spec, delta, StationaryOptions(alpha=opts.alpha))
    elif abs(stationary.delta - delta) > 1e-14:
        raise ValueError("stationary solution was computed for a different delta")
    if T_trunc is None:
        T_trunc = default_truncation_horizon(delta)

    sol = _solve_truncated(spec, delta, m0, T_trunc, opts, stationary)

    if check_tail:
        tail_tol = 10.0 * opts.tol if tail_tol is None else tail_tol
        sol2 = _solve_truncated(spec, delta, m0, 2.0 * T_trunc, opts, stationary)
        gap = linf_norm(g, sol.u_path[0] - sol2.u_path[0])
        sol.extras["tail_gap"] = gap
        sol.extras["tail_checked"] = True
        if gap > tail_tol:
            raise TailSensitive(gap, tail_tol)
    return sol


def _solve_truncated(spec, delta, m0, T_trunc, opts, stationary) -> DiscountedSolution:
    g = spec.grid
    tg = make_time_grid(g, T_trunc)
    terminal = TerminalCondition.fixed(stationary.u_bar_delta)
    run_opts = opts
    if opts.init_m_path is None and opts.init_drift is None:
        run_opts = opts.replace(init_drift=gradient(g, stationary.u_bar_delta))
    base = picard_mfg(spec, tg, m0, terminal, 0.0, delta, run_opts)
    return DiscountedSolution(
        grid=base.grid, tg=base.tg, u_path=base.u_path, m_path=base.m_path,
        iterations=base.iterations, final_residual=base.final_residual,
        converged=base.converged, lambda_shift=0.0, extras=base.extras,
        delta=delta,
    )


def discounted_decay_curve(sol: DiscountedSolution,
                           stat: DiscountedStationary) -> np.ndarray:
    """Per-slice sup distances (t, |m - m_bar_delta|, |Du - Du_bar_delta|)."""
    if abs(sol.delta - stat.delta) > 1e-14:
        raise ValueError(
            f"delta mismatch: solution {sol.delta} vs stationary {stat.delta}")
    g = sol.grid
    m_bar = validate_density(g, stat.m_bar_delta)
    du_bar = gradient(g, as_field(g, stat.u_bar_delta))
    dist_m = np.max(np.abs(sol.m_path - m_bar), axis=1)
    dist_du = np.max(np.abs(path_gradient(g, sol.u_path) - du_bar), axis=1)
    return np.column_stack([sol.tg.times, dist_m, dist_du])
