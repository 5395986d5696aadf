"""Phase-field tumor growth with chemotaxis: state, tangent and adjoint solvers,
and box-constrained optimal control by projected gradients."""

from .cost import CostSpec, adjoint_source, evaluate_cost, reduced_gradient
from .grid import Domain, assemble_neumann_laplacian, build_domain, inner_product, integrate
from .potentials import PotentialSpec, h_eval, potential_eval, yosida_prime, yosida_resolvent
from .problem import ControlProblem
from .sensitivity import duality_gap, solve_adjoint, solve_linearized
from .state import (
    Controls,
    ModelParams,
    SolverOptions,
    StateSnapshot,
    TimeGrid,
    solve_state,
    state_residual,
    step_state,
)

__version__ = "0.1.0"
