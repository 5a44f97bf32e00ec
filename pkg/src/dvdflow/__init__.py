"""Energy-stable time integrators for phase-field gradient flows.

Implicit discrete-variational-derivative (DVD) Runge--Kutta schemes, linear
relaxed DVD schemes, a cell-centred finite-difference layer, a Newton--GMRES
solver stack and an experiment harness.
"""
from .dvd import DvdStepper, StepRejected, StepReport
from .grid import BoundaryCondition, Field, UniformGrid
from .model import DissipationKind, DoubleWell, FreeEnergy
from .relaxed import RelaxedScheme, RelaxedStepper
from .solver import ConvergenceError, KrylovConfig, NewtonConfig, gmres, newton
from .tableau import DvdTableau, builtin_tableau

__all__ = [
    "BoundaryCondition",
    "ConvergenceError",
    "DissipationKind",
    "DoubleWell",
    "DvdStepper",
    "DvdTableau",
    "Field",
    "FreeEnergy",
    "KrylovConfig",
    "NewtonConfig",
    "RelaxedScheme",
    "RelaxedStepper",
    "StepReport",
    "StepRejected",
    "UniformGrid",
    "builtin_tableau",
    "gmres",
    "newton",
]

__version__ = "0.1.0"
