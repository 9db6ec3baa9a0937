"""Solver failure types.

Validation problems (wrong shapes, invalid densities, bad arguments) raise
plain ValueError / IndexError; the classes here signal numerical failures of
otherwise well-posed solves.
"""

from __future__ import annotations

__all__ = ["SolverError", "NonConvergence", "TailSensitive", "CauchyFailure",
           "DegenerateKernel"]


class SolverError(RuntimeError):
    pass


class NonConvergence(SolverError):
    """Fixed-point or Newton loop exhausted max_iter.

    Signals that the damping should be lowered (or the tolerance loosened);
    carries the last residual so callers can decide.
    """

    def __init__(self, message: str, iterations: int, residual: float,
                 lambda_est: float | None = None):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual
        self.lambda_est = lambda_est


class TailSensitive(SolverError):
    """Doubling the truncation horizon moved the answer more than allowed."""

    def __init__(self, gap: float, limit: float):
        super().__init__(f"truncated horizon is tail-sensitive: gap {gap:.3e} > {limit:.3e}")
        self.gap = gap
        self.limit = limit


class CauchyFailure(SolverError):
    """A Cauchy refinement loop hit its cap before the gap closed."""

    def __init__(self, message: str, last_gap: float):
        super().__init__(f"{message} (last gap {last_gap:.3e})")
        self.last_gap = last_gap


class DegenerateKernel(SolverError):
    """Stationary Fokker-Planck matrix did not have a one-dimensional kernel."""
