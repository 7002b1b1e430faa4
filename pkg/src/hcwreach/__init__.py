"""Hamilton-Jacobi reachability for planar HCW proximity operations.

Submodules
----------
dynamics    relative-motion model, saddle inputs, Hamiltonian
levelset    grids, fields, targets, interpolation, contours, HJF1 files
solver      backward reachable tube by Lax-Friedrichs time stepping
supervisor  three-mode hybrid controller
sim         closed-loop episodes and Monte Carlo batches
config      YAML run configuration
"""

from .dynamics import OrbitGameParams
from .levelset import BoxTarget, DiscTarget, GridSpec, ScalarField, build_target_field, read_field, write_field
from .solver import SolveConfig, ValueFunctionResult, solve

__all__ = [
    "OrbitGameParams",
    "GridSpec",
    "ScalarField",
    "DiscTarget",
    "BoxTarget",
    "build_target_field",
    "read_field",
    "write_field",
    "SolveConfig",
    "ValueFunctionResult",
    "solve",
]
__version__ = "0.1.0"
