"""Augmented primal-dual distributed optimization dynamics.

Simulates projected primal-dual flows over directed graphs (consensus,
coupled-inequality, and feed-forward variants), and numerically verifies
that the nominal augmented controller minimizes an explicit transient cost
functional: the nominal cost equals the storage value of the initial state,
and open-loop perturbations raise it by exactly their weighted energy.
"""

from .convex import (
    Affine,
    ConsensusProblem,
    CouplingProblem,
    DomainError,
    Exponential,
    FunctionSum,
    InfeasibleProblemError,
    NegLog,
    Quadratic,
    ReferenceSolution,
    ScalarConvexFunction,
    SolverError,
    bregman,
    eval_and_grad,
    function_from_spec,
    kkt_residual,
    reference_solution,
)
from .cost import (
    VARIANTS,
    ControlCostMatrix,
    CostBreakdown,
    EquilibriumMismatchError,
    IdentityReport,
    PerturbationReport,
    SinePerturbation,
    ValueIdentityReport,
    build_closed_loop,
    control_cost_matrix,
    evaluate_cost,
    perturbation_excess_check,
    reference_from_trajectory,
    sample_perturbation,
    sigma_terms,
    state_cost,
    storage_value,
    storage_values,
    value_identity_check,
    verify_identities,
)
from .dynamics import (
    AugmentationProfile,
    ClosedLoop,
    FeedforwardForm,
    FeedforwardNominalController,
    NominalController,
    OutputSnapshot,
    PerturbedController,
    ProfileError,
    StateCorruptionError,
    SystemState,
    UnsupportedVariantError,
    closed_loop,
    equilibrium_state,
    feedforward_transform,
    initial_state,
    nominal_controller,
    outputs_of,
    positive_projection,
    uniform_profile,
    vector_field,
)
from .graph import Graph, GraphError, incidence_matrix, weighted_laplacian
from .simulate import (
    DivergenceError,
    Trajectory,
    TransientMetrics,
    equilibrium_of,
    integrate,
    transient_metrics,
)

__version__ = "0.1.0"
