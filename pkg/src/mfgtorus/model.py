"""Model data: quadratic Hamiltonian plus convolution couplings.

The Hamiltonian family is H(x, p) = p^2/2 - V(x), which is uniformly convex
with H_pp = 1 and admits a Hopf-Cole oracle for the decoupled ergodic
constant.  The couplings are

    F(x, m) = (rho_F * m)(x) + f0(x),      G(x, m) = (rho_G * m)(x) + g0(x)

with even, positive-semidefinite kernels, so F and G are monotone and their
measure derivatives are the m-independent convolution operators
mu -> rho * mu.  Kernel admissibility is a spectral condition on the
circulant kernel matrix, checked at construction via the discrete Fourier
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    TorusGrid,
    as_field,
    average,
    circular_convolve,
    gradient,
    validate_centered,
    validate_density,
)

__all__ = [
    "ModelSpec",
    "HamiltonianEval",
    "trig_poly",
    "make_model",
    "preset_model",
    "hamiltonian_eval",
    "hamiltonian_value",
    "coupling_field",
    "coupling_derivative_apply",
    "monotonicity_gap",
]

#: discrete Fourier coefficients of a coupling kernel must exceed this
KERNEL_PSD_TOL = -1e-12

PRESET_NAMES = ("trivial", "decoupled", "standard")


def trig_poly(g: TorusGrid, const: float = 0.0, cos: dict | None = None,
              sin: dict | None = None) -> np.ndarray:
    """Sample const + sum_k cos[k]*cos(2 pi k x) + sin[k]*sin(2 pi k x) on g."""
    x = g.nodes
    f = np.full(g.n, float(const))
    for k, c in (cos or {}).items():
        f += float(c) * np.cos(2.0 * np.pi * int(k) * x)
    for k, c in (sin or {}).items():
        f += float(c) * np.sin(2.0 * np.pi * int(k) * x)
    return f


def kernel_fourier_coefficients(g: TorusGrid, kernel: np.ndarray) -> np.ndarray:
    """Real DFT coefficients of an even kernel (fft/n)."""
    return np.real(np.fft.fft(np.asarray(kernel, dtype=float))) / g.n


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model data on a fixed grid; validated at construction."""

    grid: TorusGrid
    potential: np.ndarray        # V in H(x,p) = p^2/2 - V(x)
    kernel_f: np.ndarray         # rho_F
    offset_f: np.ndarray         # f0
    kernel_g: np.ndarray         # rho_G
    offset_g: np.ndarray         # g0
    name: str = "custom"
    # gradient of V, cached for H_x evaluations
    _dV: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        for attr in ("potential", "kernel_f", "offset_f", "kernel_g", "offset_g"):
            object.__setattr__(self, attr, as_field(g, getattr(self, attr)))
        for attr in ("kernel_f", "kernel_g"):
            ker = getattr(self, attr)
            mirrored = ker[(-np.arange(g.n)) % g.n]
            if np.max(np.abs(ker - mirrored)) > 1e-12:
                raise ValueError(f"{attr} is not even on the grid")
            coeffs = kernel_fourier_coefficients(g, ker)
            if coeffs.min() < KERNEL_PSD_TOL:
                raise ValueError(
                    f"{attr} is not positive semidefinite: "
                    f"min Fourier coefficient {coeffs.min():.3e}"
                )
        object.__setattr__(self, "_dV", gradient(g, self.potential))

    def fourier_coefficients(self, which: str) -> np.ndarray:
        return kernel_fourier_coefficients(self.grid, self._kernel(which))

    def _kernel(self, which: str) -> np.ndarray:
        if which == "F":
            return self.kernel_f
        if which == "G":
            return self.kernel_g
        raise ValueError(f"coupling must be 'F' or 'G', got {which!r}")

    def _offset(self, which: str) -> np.ndarray:
        return self.offset_f if which == "F" else self.offset_g


@dataclass(frozen=True)
class HamiltonianEval:
    """H and its derivatives at one (x_i, p) pair; Hpp = 1 for this family."""

    H: float
    Hp: float
    Hpp: float
    Hx: float


def hamiltonian_eval(spec: ModelSpec, i: int, p: float) -> HamiltonianEval:
    """Evaluate H, H_p, H_pp, H_x at node i and momentum p."""
    if not 0 <= i < spec.grid.n:
        raise IndexError(f"node index {i} out of range for n = {spec.grid.n}")
    return HamiltonianEval(
        H=0.5 * p * p - spec.potential[i],
        Hp=p,
        Hpp=1.0,
        Hx=-spec._dV[i],
    )


def hamiltonian_value(spec: ModelSpec, p: np.ndarray) -> np.ndarray:
    """Vectorized H(x, p) = p^2/2 - V(x) for a momentum field p."""
    return 0.5 * p * p - spec.potential


def coupling_field(spec: ModelSpec, which: str, m: np.ndarray) -> np.ndarray:
    """F(x, m) (or G): kernel convolution of the density plus the offset."""
    m = validate_density(spec.grid, m)
    return circular_convolve(spec.grid, spec._kernel(which), m) + spec._offset(which)


def coupling_derivative_apply(spec: ModelSpec, which: str, mu: np.ndarray) -> np.ndarray:
    """Measure derivative of the coupling applied to a centered perturbation.

    For convolution couplings the derivative kernel is rho itself,
    independently of the base measure.
    """
    try:
        mu = validate_centered(spec.grid, mu)
    except ValueError as exc:
        raise ValueError(f"derivative requires centered perturbation: {exc}") from None
    return circular_convolve(spec.grid, spec._kernel(which), mu)


def coupling_matrix(spec: ModelSpec, which: str) -> np.ndarray:
    """Dense matrix of the map m -> rho * m (offset not included).

    Solvers that evaluate the coupling along a whole time path build this
    once per sweep and apply it as a single matrix product.
    """
    from .grid import circulant_matrix

    return spec.grid.h * circulant_matrix(spec.grid, spec._kernel(which))


def monotonicity_gap(spec: ModelSpec, which: str, m1: np.ndarray, m2: np.ndarray) -> float:
    """h * sum (F(m1) - F(m2)) (m1 - m2); >= -1e-10 for admissible kernels."""
    f1 = coupling_field(spec, which, m1)
    f2 = coupling_field(spec, which, m2)
    return float(spec.grid.h * np.sum((f1 - f2) * (np.asarray(m1) - np.asarray(m2))))


def make_model(g: TorusGrid, potential, kernel_f, offset_f, kernel_g, offset_g,
               name: str = "custom") -> ModelSpec:
    return ModelSpec(g, potential, kernel_f, offset_f, kernel_g, offset_g, name=name)


def preset_model(name: str, g: TorusGrid) -> ModelSpec:
    """Built-in models: trivial, decoupled, standard."""
    zero = np.zeros(g.n)
    if name == "trivial":
        return ModelSpec(g, zero, zero, zero, zero, zero, name=name)
    if name == "decoupled":
        v = trig_poly(g, cos={1: 0.5})
        return ModelSpec(g, v, zero, zero, zero, zero, name=name)
    if name == "standard":
        v = trig_poly(g, cos={1: 0.5})
        rho = trig_poly(g, const=1.0, cos={1: 0.5, 2: 0.25})
        f0 = trig_poly(g, sin={1: 0.3})
        return ModelSpec(g, v, rho, f0, rho.copy(), zero, name=name)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


# --- JSON round-trip -------------------------------------------------------

def model_to_dict(spec: ModelSpec) -> dict:
    """Serialize a ModelSpec to the JSON config schema (sampled fields)."""
    return {
        "name": spec.name,
        "potential": spec.potential.tolist(),
        "kernel_f": spec.kernel_f.tolist(),
        "offset_f": spec.offset_f.tolist(),
        "kernel_g": spec.kernel_g.tolist(),
        "offset_g": spec.offset_g.tolist(),
    }


def model_from_config(g: TorusGrid, model) -> ModelSpec:
    """Build a ModelSpec from a preset name or a config mapping.

    Mapping fields may be sampled arrays (length n) or trig-poly mappings
    {"const": c, "cos": {k: a}, "sin": {k: b}}.
    """
    if isinstance(model, str):
        return preset_model(model, g)
    if not isinstance(model, dict):
        raise ValueError("model must be a preset name or a mapping")

    def field_of(key):
        val = model.get(key, 0.0)
        if isinstance(val, dict):
            return trig_poly(g, val.get("const", 0.0), val.get("cos"), val.get("sin"))
        if isinstance(val, (int, float)):
            return np.full(g.n, float(val))
        return as_field(g, val)

    return ModelSpec(
        g,
        field_of("potential"),
        field_of("kernel_f"),
        field_of("offset_f"),
        field_of("kernel_g"),
        field_of("offset_g"),
        name=str(model.get("name", "custom")),
    )


def mean_coupling(spec: ModelSpec, which: str, m: np.ndarray) -> float:
    """Average of the coupling field, used in diagnostics."""
    return average(spec.grid, coupling_field(spec, which, m))
