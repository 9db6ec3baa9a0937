"""Mean-field-game solvers on the 1-D torus.

Library layout, one module per subsystem:

    grid            periodic discrete calculus
    model           Hamiltonian + convolution couplings
    finite_horizon  forward-backward system on [0, T]
    ergodic         stationary system and the ergodic constant
    discounted      discounted system, stationary and truncated-horizon
    linearized      linearized systems, including the ergodic selection
    master          master-equation values, corrector, McKean-Vlasov flow
    experiments     config-driven experiment sweeps and rate fits
    cli             command-line front end
"""

from .errors import (
    CauchyFailure,
    DegenerateKernel,
    NonConvergence,
    SolverError,
    TailSensitive,
)
from .grid import (
    TorusGrid,
    build_grid,
    circular_convolve,
    div_flux,
    gradient,
    laplacian,
    reduce_field,
)
from .model import (
    HamiltonianEval,
    ModelSpec,
    coupling_derivative_apply,
    coupling_field,
    hamiltonian_eval,
    monotonicity_gap,
    preset_model,
)
from .finite_horizon import (
    MFGSolution,
    SolverOptions,
    TerminalCondition,
    TimeGrid,
    duality_curve,
    fp_forward_sweep,
    hjb_backward_sweep,
    make_time_grid,
    solve_mfg_finite,
    turnpike_distance_curve,
)
from .ergodic import ErgodicOptions, ErgodicSolution, ergodic_hjb, solve_ergodic, stationary_fp
from .discounted import (
    DiscountedSolution,
    DiscountedStationary,
    StationaryOptions,
    discounted_decay_curve,
    solve_discounted_mfg,
    solve_discounted_stationary,
)
from .linearized import (
    GateauxReport,
    LinearizedErgodic,
    LinearizedSolution,
    gateaux_consistency_check,
    solve_linearized_discounted,
    solve_linearized_ergodic,
    solve_linearized_finite,
)
from .master import (
    CorrectorField,
    CorrectorPipeline,
    MasterOptions,
    MeasureDerivativeSlice,
    eval_U_discounted,
    eval_U_finite,
    eval_corrector_chi,
    eval_measure_derivative,
    mckean_vlasov_flow,
    weak_solution_selfcheck,
)

__version__ = "0.1.0"
