"""Distributed continuous-time solvers for linear equations ``(sum A_i) x = sum b_i``."""

from .graph import (
    ConnectivityError,
    Digraph,
    GraphError,
    GraphSequence,
    balance_by_head_scaling,
    in_laplacian,
    is_strongly_connected,
    is_weight_balanced,
    next_graph,
    positive_null_eigenvector,
    ring,
)
from .kernels import BACKEND, DivergenceError
from .linproblem import (
    AgentData,
    NetworkProblem,
    NoSolutionError,
    generate_problem,
    global_system,
    has_solution,
    nullspace_condition_holds,
    objective_f,
    reference_solution,
    stack,
)
from .dynamics import AlgorithmSpec, SolverState, simulate

__version__ = "0.1.0"
