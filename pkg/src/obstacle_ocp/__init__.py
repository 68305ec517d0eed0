"""Optimal control of the obstacle problem with pointwise state constraints."""
from .errors import (InternalError, InvalidArgument, InvalidCoefficients, InvalidData,
                     ObstacleOCPError, OracleInapplicable, SolverFailure)
from .fem import (DualField, Mesh, NodalField, OperatorSpec, SparseOperator, assemble_mass,
                  assemble_operator, build_structured_mesh, norms, solve_linear)
from .ocp import (OCPIterate, OCPProblem, PathHistory, Schedule, construct_slater_candidate,
                  path_follow, slater_check, smoothed_state_solve, solve_pgamma)
from .stationarity import (StationarityReport, StationaryPoint, TestFunctionFamily,
                           check_b_stationarity, check_c_stationarity,
                           check_strong_stationarity, complementarity_gap,
                           normal_cone_certificate, recover_multipliers,
                           tangent_cone_membership)
from .vi import VISolution, directional_derivative, solve_vi

__version__ = "0.1.0"
