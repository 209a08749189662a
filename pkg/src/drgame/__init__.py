"""Distributionally robust games with f-divergence uncertainty and Bregman learning dynamics."""

from .bregman import (
    BregmanState,
    BregmanTrajectory,
    Generator,
    SmoothObjective,
    TimeScaling,
    bregman_divergence,
    bregman_step,
    convergence_bound,
    ideal_scaling,
    implicit_bregman_step,
    integrate,
    lyapunov,
    neg_entropy,
    sq_euclidean,
    time_to_precision,
)
from .divergence import BURG, CHI2, KL, DiscreteMeasure, FDivergence, conjugate_numeric, f_divergence, get_family
from .errors import ConsistencyError, DomainError, IntegrationError, StructuralError
from .game import (
    AugmentedDecision,
    Box,
    RobustGame,
    ScenarioSet,
    Simplex,
    dual_objective,
    inner_dual,
    is_robust_equilibrium,
    log_quadratic_game,
    mixed_extension,
    multimodal_game,
    robust_value_dual,
    variance_approximation,
    worst_case_distribution,
)
from .learning import (
    JointState,
    LearnerConfig,
    integrand_gradient,
    pseudo_potential_check,
    run_baseline,
    run_learning,
    swarm_gradient,
)
from .oracle import grid_global_min, primal_inner_sup, triality_check

__version__ = "0.1.0"
