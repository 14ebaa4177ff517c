"""2D incompressible Navier-Stokes solver with Taylor-Hood elements.

Supports four formulations of the convective term (convective,
skew-symmetric, conservative, EMAC), fully implicit BDF2/BDF3 and
Crank-Nicolson time stepping, a semi-implicit SBDF2 scheme, and the
flow-past-a-cylinder stress benchmark with drag/lift, conservation
monitors and Strouhal-period estimation.
"""

from .mesh import Mesh, MeshSpec, build_rect_mesh, build_cylinder_mesh, import_msh
from .quadrature import triangle_rule
from .spaces import ScalarSpace, MixedSpace, make_mixed_space, interpolate, DirichletData
from .assembly import ConvectiveForm
from .linsolve import Factorization, factorize, solve, SingularMatrixError
from .nonlinear import NewtonConfig, NewtonReport, NewtonFailedError, newton_solve
from .timeloop import Model, SchemeConfig, State, run_simulation, stokes_initial
from .quantities import (
    BoundaryForce,
    PeriodEstimate,
    StepQuantities,
    estimate_period,
    force_direct,
    force_residual,
    monitors,
)

__version__ = "0.1.0"
