"""Extremal solvers for linear optimal control under an on/off jamming signal.

Two problem families share the plant z' = A z + B u1 u2 with a binary
jammer u2 whose on-time is the sparse part of the cost: a minimum-on-time
transfer problem with box-bounded u1, and a quadratic regulation problem
with a per-time activation charge gamma.
"""

from jamopt.analysis import (
    CertificateReport,
    CostBreakdown,
    OracleInfeasibleError,
    OracleResult,
    certify,
    evaluate_cost,
    l0_seminorm,
    oracle_lq,
    oracle_reach,
)
from jamopt.extremal import (
    AdjointInit,
    Extremal,
    adjoint_closed_form,
    hamiltonian,
    lq_controls,
    lq_field,
    lq_q,
    on_intervals,
    reach_field,
    reach_sigma,
    reach_u1,
    reach_u2,
    sparse_lq_control,
)
from jamopt.model import (
    ConfigParseError,
    ControlBox,
    ControllabilityReport,
    LqProblem,
    LtiSystem,
    ReachProblem,
    ValidationError,
    controllability_report,
    load_problem,
    problem_hash,
    serialize_problem,
)
from jamopt.numkernel import (
    EventSpec,
    IntegrationError,
    SingularMatrixError,
    Trajectory,
    integrate_with_events,
    linear_solve,
    mat_exp,
)
from jamopt.riccati import (
    RiccatiSolution,
    classical_lqr,
    hybrid_riccati_from_extremal,
    lqr_feedback_rollout,
)
from jamopt.shooting import (
    ShootingConfig,
    ShootingResult,
    lq_residual,
    reach_residual,
    rollout_extremal,
    solve_bvp,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointInit",
    "CertificateReport",
    "ConfigParseError",
    "ControlBox",
    "ControllabilityReport",
    "CostBreakdown",
    "EventSpec",
    "Extremal",
    "IntegrationError",
    "LqProblem",
    "LtiSystem",
    "OracleInfeasibleError",
    "OracleResult",
    "ReachProblem",
    "RiccatiSolution",
    "ShootingConfig",
    "ShootingResult",
    "SingularMatrixError",
    "Trajectory",
    "ValidationError",
    "adjoint_closed_form",
    "certify",
    "classical_lqr",
    "controllability_report",
    "evaluate_cost",
    "hamiltonian",
    "hybrid_riccati_from_extremal",
    "integrate_with_events",
    "l0_seminorm",
    "linear_solve",
    "load_problem",
    "lq_controls",
    "lq_field",
    "lq_q",
    "lq_residual",
    "lqr_feedback_rollout",
    "mat_exp",
    "on_intervals",
    "oracle_lq",
    "oracle_reach",
    "problem_hash",
    "reach_field",
    "reach_residual",
    "reach_sigma",
    "reach_u1",
    "reach_u2",
    "rollout_extremal",
    "serialize_problem",
    "solve_bvp",
    "sparse_lq_control",
]
