"""Low-rank conditional MNL personalization: estimation, assortment optimization, bandit simulation."""
from .assortment import (AssortmentSolution, brute_force_assortment, expected_revenue, optimal_assortment,
                         optimality_gap, plan_assortment, population_revenue)
from .bandit import (ContextIgnorantPolicy, NucNormPlanPolicy, NucNormPolicy, OraclePolicy, PolicyConfig,
                     RegretTrace, StructureIgnorantPolicy, context_ignorant_step, instantaneous_regret,
                     draw_arrivals, make_policy, nucnorm_plan_step, nucnorm_step, oracle_action, simulate,
                     structure_ignorant_step, theoretical_C)
from .choice import (NO_PURCHASE, Instance, InvalidInputError, Observation, ObservationLog,
                     choice_probabilities, nll, nll_gradient, sample_interaction, sample_observations,
                     sample_uniform_assortment)
from .estimator import (Estimate, FactorPair, FgdConfig, estimate_mu, factored_gradients, factored_objective,
                        fgd_initialize, fgd_solve, per_type_mle, pooled_mle, practical_lambda, rmse,
                        tail_singular_sum)
from .simlab import (ExperimentSpec, ResultRow, emit_report, exploit_match_rate, generate_instance, load_spec, parse_spec,
                     run_dynamic, run_rmse_per_row, run_static)

__version__ = "0.1.0"
