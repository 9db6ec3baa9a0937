"""Master equation evaluated through its characteristics.

The time-dependent master-equation value is U(-T, x, m0) = u(0, x) where
(u, m) solves the finite-horizon system from m0 with terminal coupling G;
the discounted value is U_delta(x, m0) = u(0, x) of the discounted system.
The ergodic corrector chi(x, m0) is the common limit

    chi = lim_T  U(-T, ., m0) - lambda T  =  lim_delta  U_delta(., m0) - lambda/delta

(up to additive constants), evaluated on demand per queried density by a
Cauchy refinement in T or in delta.  Two normalizations are offered: the raw
long-time limit with its constant estimated at the invariant density, and
the selected normalization chi(., m_bar) = u_bar + theta_bar coming from the
linearized ergodic system.

A CorrectorPipeline caches the ergodic data, the refinement parameter and
the normalization shift per (model, method); evaluations at distinct
densities are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discounted import (
    DiscountedStationary,
    StationaryOptions,
    solve_discounted_mfg,
    solve_discounted_stationary,
)
from .ergodic import ErgodicOptions, ErgodicSolution, solve_ergodic
from .errors import CauchyFailure, NonConvergence
from .finite_horizon import (
    MFGSolution,
    SolverOptions,
    TerminalCondition,
    TimeGrid,
    make_time_grid,
    picard_mfg,
    solve_mfg_finite,
    _fp_step,
)
from .grid import as_field, average, gradient, linf_norm, validate_centered, validate_density
from .linearized import (
    LinearizedErgodic,
    solve_linearized_discounted,
    solve_linearized_finite,
    solve_linearized_ergodic,
)
from .model import ModelSpec

__all__ = [
    "MasterOptions",
    "CorrectorField",
    "MeasureDerivativeSlice",
    "CorrectorPipeline",
    "eval_U_finite",
    "eval_U_discounted",
    "eval_corrector_chi",
    "eval_measure_derivative",
    "mckean_vlasov_flow",
    "weak_solution_selfcheck",
    "WeakSolutionReport",
]

METHODS = ("longtime", "discount")
NORMALIZATIONS = ("longtime_c", "theta_selected")


@dataclass
class MasterOptions:
    """Cauchy-refinement and inner-solver controls for the corrector."""

    tol_chi: float = 1e-4
    T_start: float = 5.0
    T_growth: float = 1.5
    T_cap: float = 80.0
    delta_start: float = 0.2
    delta_ratio: float = 2.0
    delta_floor: float = 0.0125
    reeval_stride: int = 5
    # inner solves start undamped and fall back to halved damping on failure
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(alpha=1.0, tol=1e-10))


@dataclass
class CorrectorField:
    """chi(., m0) for one queried density, with the applied normalization."""

    chi: np.ndarray
    normalization: str
    shift_constant: float
    method: str
    parameter: float  # the T* or delta* actually used
    cauchy_gap: float

    def to_dict(self) -> dict:
        return {
            "chi": self.chi.tolist(),
            "shift_constant": self.shift_constant,
            "method": self.method,
            "normalization": self.normalization,
            "T_or_delta_used": self.parameter,
            "cauchy_gap": self.cauchy_gap,
        }


@dataclass
class MeasureDerivativeSlice:
    """x -> integral of dU/dm(t, x, m0, y) mu0(y) dy, i.e. v(0, .)."""

    response: np.ndarray
    route: str


def _robust(solve, opts: SolverOptions, tries: int = 3):
    """Run a Picard solve, halving the damping on non-convergence."""
    alpha = opts.alpha
    last = None
    for _ in range(tries):
        try:
            return solve(opts.replace(alpha=alpha))
        except NonConvergence as exc:
            last = exc
            alpha *= 0.5
    raise last


class CorrectorPipeline:
    """Caches ergodic data and per-method corrector state for one model."""

    def __init__(self, spec: ModelSpec, opts: MasterOptions | None = None):
        self.spec = spec
        self.opts = opts or MasterOptions()
        self._ergodic: ErgodicSolution | None = None
        self._linearized: LinearizedErgodic | None = None
        self._stationary: dict[float, DiscountedStationary] = {}
        self._param: dict[str, tuple[float, float]] = {}  # method -> (param, gap)
        self._chi_at_mbar: dict[str, np.ndarray] = {}
        self._shift: dict[str, float] = {}
        # warm starts for repeated characteristics solves at nearby densities
        # (flows, self-checks); an initial guess only, never part of the answer
        self._warm_m_path: dict[tuple, np.ndarray] = {}

    # --- cached ergodic data ------------------------------------------------

    @property
    def ergodic(self) -> ErgodicSolution:
        if self._ergodic is None:
            self._ergodic = solve_ergodic(self.spec, ErgodicOptions())
        return self._ergodic

    @property
    def linearized_ergodic(self) -> LinearizedErgodic:
        if self._linearized is None:
            self._linearized = solve_linearized_ergodic(self.spec, self.ergodic,
                                                        check_deltas=())
        return self._linearized

    def stationary(self, delta: float) -> DiscountedStationary:
        key = round(float(delta), 12)
        if key not in self._stationary:
            self._stationary[key] = solve_discounted_stationary(
                self.spec, delta, StationaryOptions())
        return self._stationary[key]

    # --- characteristics ----------------------------------------------------

    def u_finite(self, T: float, m0) -> np.ndarray:
        """U(-T, ., m0) via the finite-horizon system with terminal G."""
        g = self.spec.grid
        tg = make_time_grid(g, T)
        key = ("finite", round(float(T), 12))
        warm_path = self._warm_m_path.get(key)
        if warm_path is not None and warm_path.shape == (tg.nt + 1, g.n):
            opts = self.opts.solver.replace(init_m_path=warm_path)
        else:
            opts = self.opts.solver.replace(
                init_drift=gradient(g, self.ergodic.u_bar))
        sol = _robust(
            lambda o: picard_mfg(self.spec, tg, m0, TerminalCondition.coupling_g(),
                                 0.0, 0.0, o),
            opts,
        )
        self._warm_m_path[key] = sol.m_path
        return sol.u_path[0]

    def u_discounted(self, delta: float, m0) -> np.ndarray:
        """U_delta(., m0) via the truncated discounted system."""
        stat = self.stationary(delta)
        sol = _robust(
            lambda o: solve_discounted_mfg(self.spec, delta, m0, opts=o,
                                           stationary=stat),
            self.opts.solver,
        )
        return sol.u_path[0]

    # --- corrector ----------------------------------------------------------

    def chi_raw(self, m0, method: str = "longtime") -> tuple[np.ndarray, float, float]:
        """Unnormalized corrector (field, parameter, cauchy_gap).

        The Cauchy refinement runs once per (model, method); the accepted
        parameter is reused for later densities (the underlying convergence
        is uniform in the measure).
        """
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        m0 = validate_density(self.spec.grid, m0)
        lam = self.ergodic.lambda_bar
        if method in self._param:
            param, gap = self._param[method]
            if method == "longtime":
                return self.u_finite(param, m0) - lam * param, param, gap
            return self.u_discounted(param, m0) - lam / param, param, gap

        g = self.spec.grid
        o = self.opts
        gap = np.inf
        if method == "longtime":
            param, prev = o.T_start, self.u_finite(o.T_start, m0) - lam * o.T_start
            while True:
                nxt_param = param * o.T_growth
                if nxt_param > o.T_cap * (1 + 1e-9):
                    raise CauchyFailure("long-time corrector hit the horizon cap", gap)
                cur = self.u_finite(nxt_param, m0) - lam * nxt_param
                gap = linf_norm(g, cur - prev)
                param, prev = nxt_param, cur
                if gap <= o.tol_chi:
                    break
        else:
            param, prev = o.delta_start, \
                self.u_discounted(o.delta_start, m0) - lam / o.delta_start
            while True:
                nxt_param = param / o.delta_ratio
                if nxt_param < o.delta_floor * (1 - 1e-9):
                    raise CauchyFailure("discount corrector hit the delta floor", gap)
                cur = self.u_discounted(nxt_param, m0) - lam / nxt_param
                gap = linf_norm(g, cur - prev)
                param, prev = nxt_param, cur
                if gap <= o.tol_chi:
                    break
        self._param[method] = (param, gap)
        return prev, param, gap

    def _chi_raw_at_mbar(self, method: str) -> np.ndarray:
        if method not in self._chi_at_mbar:
            self._chi_at_mbar[method] = self.chi_raw(self.ergodic.m_bar, method)[0]
        return self._chi_at_mbar[method]

    def shift_constant(self, method: str) -> float:
        """theta_selected shift: make the pipeline at m_bar equal u_bar + theta."""
        if method not in self._shift:
            target = self.ergodic.u_bar + self.linearized_ergodic.theta_bar
            raw = self._chi_raw_at_mbar(method)
            self._shift[method] = average(self.spec.grid, target - raw)
        return self._shift[method]

    def longtime_constant(self, method: str) -> float:
        """Estimate of the free constant: <chi_raw(., m_bar) - u_bar>."""
        return average(self.spec.grid,
                       self._chi_raw_at_mbar(method) - self.ergodic.u_bar)

    def chi(self, m0, method: str = "longtime",
            normalization: str = "theta_selected") -> CorrectorField:
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        raw, param, gap = self.chi_raw(m0, method)
        if normalization == "theta_selected":
            shift = self.shift_constant(method)
            return CorrectorField(raw + shift, normalization, shift, method, param, gap)
        return CorrectorField(raw, normalization, self.longtime_constant(method),
                              method, param, gap)


# --- module-level operation surface ----------------------------------------

def eval_U_finite(spec: ModelSpec, T: float, m0,
                  opts: SolverOptions | None = None,
                  pipeline: CorrectorPipeline | None = None) -> np.ndarray:
    """u(0, .) of the finite-horizon system from m0 with terminal G."""
    if T <= 0:
        raise ValueError("T must be positive")
    if pipeline is not None:
        return pipeline.u_finite(T, m0)
    tg = make_time_grid(spec.grid, T)
    sol = solve_mfg_finite(spec, tg, m0, TerminalCondition.coupling_g(),
                           opts=opts or SolverOptions())
    return sol.u_path[0]


def eval_U_discounted(spec: ModelSpec, delta: float, m0,
                      opts: SolverOptions | None = None,
                      pipeline: CorrectorPipeline | None = None) -> np.ndarray:
    """u(0, .) of the discounted system from m0."""
    if pipeline is not None:
        return pipeline.u_discounted(delta, m0)
    sol = solve_discounted_mfg(spec, delta, m0, opts=opts or SolverOptions())
    return sol.u_path[0]


def eval_corrector_chi(spec: ModelSpec, m0, method: str = "longtime",
                       normalization: str = "theta_selected",
                       opts: MasterOptions | None = None,
                       pipeline: CorrectorPipeline | None = None) -> CorrectorField:
    """Corrector chi(., m0) by the long-time or vanishing-discount route."""
    pipeline = pipeline or CorrectorPipeline(spec, opts)
    return pipeline.chi(m0, method, normalization)


def eval_measure_derivative(spec: ModelSpec, T: float, m0, mu0,
                            route: str = "finite", delta: float | None = None,
                            opts: SolverOptions | None = None) -> MeasureDerivativeSlice:
    """v(0, .) of the matching linearized system: the response
    x -> integral dU/dm(x, m0, y) mu0(y) dy."""
    g = spec.grid
    m0 = validate_density(g, m0)
    mu0 = validate_centered(g, mu0)
    opts = opts or SolverOptions(tol=1e-11)
    if route == "finite":
        tg = make_time_grid(g, T)
        base = solve_mfg_finite(spec, tg, m0, TerminalCondition.coupling_g(), opts=opts)
        lin = solve_linearized_finite(spec, base, mu0, "dG_dm", opts)
    elif route == "discounted":
        if delta is None:
            raise ValueError("the discounted route needs a delta")
        base = solve_discounted_mfg(spec, delta, m0, opts=opts)
        lin = solve_linearized_discounted(spec, base, mu0, delta, opts)
    else:
        raise ValueError(f"route must be 'finite' or 'discounted', got {route!r}")
    return MeasureDerivativeSlice(lin.v_path[0], route)


def mckean_vlasov_flow(spec: ModelSpec, m0, T: float,
                       pipeline: CorrectorPipeline | None = None,
                       method: str = "longtime",
                       opts: MasterOptions | None = None) -> np.ndarray:
    """Density flow driven by the feedback drift H_p(x, D_x chi(x, m(t))).

    The corrector is re-evaluated every `reeval_stride` steps and its spatial
    gradient is frozen in between; each step is the same conservative,
    nonnegativity-preserving implicit solve as the density sweeps.  Returns
    the (nt+1, n) path of densities.
    """
    pipeline = pipeline or CorrectorPipeline(spec, opts)
    o = pipeline.opts
    g = spec.grid
    tg = make_time_grid(g, T)
    inv_dt = 1.0 / tg.dt

    m = np.empty((tg.nt + 1, g.n))
    m[0] = validate_density(g, m0)
    drift = None
    for k in range(1, tg.nt + 1):
        if drift is None or (k - 1) % o.reeval_stride == 0:
            chi_field = pipeline.chi_raw(m[k - 1], method)[0]
            drift = gradient(g, chi_field)  # H_p(x, Dchi) = Dchi
        mk = _fp_step(g, drift, inv_dt, m[k - 1] * inv_dt)
        np.clip(mk, 0.0, None, out=mk)
        mk /= g.h * mk.sum()
        m[k] = mk
    return m


@dataclass
class WeakSolutionReport:
    discrepancy: float
    u0: np.ndarray
    chi_m0: np.ndarray
    solution: MFGSolution


def weak_solution_selfcheck(spec: ModelSpec, m0, T: float,
                            pipeline: CorrectorPipeline | None = None,
                            method: str = "longtime",
                            opts: MasterOptions | None = None) -> WeakSolutionReport:
    """Defining property of a weak corrector: solve the lambda-shifted system
    on [0, T] with terminal chi(., m(T)) and report |u(0,.) - chi(., m0)|.

    The terminal is re-evaluated through the corrector pipeline at the
    current terminal density in every Picard iteration; additive constants
    in the pipeline cancel between the two sides.
    """
    pipeline = pipeline or CorrectorPipeline(spec, opts)
    g = spec.grid
    m0 = validate_density(g, m0)
    lam = pipeline.ergodic.lambda_bar
    tg = make_time_grid(g, T)

    terminal = TerminalCondition.of_measure(
        lambda m_T: pipeline.chi_raw(m_T, method)[0])
    warm = pipeline.opts.solver.replace(
        init_drift=gradient(g, pipeline.ergodic.u_bar))
    sol = _robust(
        lambda o: picard_mfg(spec, tg, m0, terminal, lam, 0.0, o), warm)
    chi_m0 = pipeline.chi_raw(m0, method)[0]
    gap = linf_norm(g, sol.u_path[0] - chi_m0)
    return WeakSolutionReport(gap, sol.u_path[0], chi_m0, sol)
