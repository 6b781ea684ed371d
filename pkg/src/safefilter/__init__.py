"""Convex predictive safety filter for neural-network dynamical systems.

Pipeline: sound affine envelopes of a ReLU residual network over trust
regions -> per-step LTV dynamics with a symmetric uncertainty envelope ->
soft-constrained robust synthesis of a state-feedback policy -> finite-
horizon safety certificate whenever every slack variable is zero.
"""

from .crown import (
    LinearBounds,
    TrustRegion,
    UncertaintyModel,
    bounds_along_trajectory,
    extract_uncertainty,
    relax,
)
from .ilqr import IlqrSpec, NnDynamicsModel, RecedingHorizonController, ilqr_plan, make_spec
from .network import MlpNetwork, WeightFileError, load_network, save_network
from .pendulum import PendulumParams, TestCase, TEST_CASES, linearized_plant, step_true
from .psf import FilterConfig, FilterResult, filter_step, rollout_nominal, rollout_policy
from .sls import (
    BltOperator,
    FeedbackPolicy,
    InfeasibleProblemError,
    QuadraticProgram,
    SlsProblem,
    SlsSolution,
    SoftPolytope,
    SolverError,
    affine_residual,
    assemble,
    extract_policy,
    max_slack,
    solve_qp,
)

__version__ = "0.1.0"
