"""Time-filtered backward Euler solvers for the matched-density
Cahn-Hilliard-Navier-Stokes system on a MAC grid."""

from chns_tf.model import GridSpec, PhysicalParams, F_potential, f_potential, fprime_potential

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "PhysicalParams",
    "F_potential",
    "f_potential",
    "fprime_potential",
    "__version__",
]
