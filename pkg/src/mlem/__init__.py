"""Multilevel stochastic integration lab.

Randomized multilevel Euler-Maruyama over a ladder of drift estimators:
cheap coarse fields fire every step, expensive refinements fire rarely with
importance weights that keep the update unbiased for the finest level.  The
package bundles the solver, guarantee-tuned and learned activation schedules,
closed-form theory predictions, a Gaussian-mixture diffusion testbed, and a
config-driven benchmark harness.
"""

from .rng import INIT_STEP, NoiseDriver, noise_increment
from .dual import Dual
from .drift import (
    DriftField,
    DriftLadder,
    LinearDrift,
    PerturbedField,
    SinusoidBump,
    ZeroField,
    estimate_lipschitz,
    ladder_error_report,
    make_synthetic_ladder,
    suggested_k_min,
)
from .problems import CostLedger, NoiseSchedule, SdeProblem, Trajectory, exact_ou_solution
from .em import advance_state, em_rollout_batch, em_solve, em_step
from .theory import (
    RecursionBound,
    e_gamma,
    error_recursion_bounds,
    geometric_sum_bound,
    predicted_cost_bound,
    predicted_cost_bound_both,
)
from .mlem import (
    BatchResult,
    BernoulliPlan,
    BestOfN,
    LevelSchedule,
    TheoremParameters,
    best_of_n,
    derive_plan_seed,
    expected_cost,
    mlem_rollout_batch,
    mlem_solve,
    mlem_step,
    theorem_parameters,
)
from .adaptive import (
    AdaptiveParams,
    GradEstimate,
    beta_shift_sweep,
    estimate_gradient,
    forward_directional_grad,
    frozen_plan_loss,
    load_params,
    prob_at,
    save_params,
    score_function_grad,
    sgd_train,
    shift_to_match_cost,
)
from .diffusion import (
    BackwardSdeDrift,
    DiscreteSchedule,
    GapResult,
    GaussianMixture,
    ProbabilityFlowDrift,
    backward_ode_rhs,
    backward_problem,
    backward_sde_drift,
    ddim_backward_step,
    ddim_gap_check,
    ddpm_backward_step,
    ddpm_chain,
    discretization_gap_check,
    gap_halving_ratios,
    make_eps_fn,
    make_score_ladder,
    mixture_score,
)
from .bench import (
    ExperimentConfig,
    GammaFit,
    ResultRow,
    adaptive_matchup,
    fit_gamma,
    load_config,
    read_results,
    run_experiment,
    run_single,
    run_sweep,
    scale_to_match_cost,
    write_results,
)

__version__ = "0.1.0"
