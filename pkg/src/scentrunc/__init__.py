"""Scenario-truncated chance-constrained trajectory optimization.

Linear systems with additive disturbances, affine disturbance-feedback
policies, greedy scenario truncation with gain-dependent constraint buffers.
"""
from .system import (DimensionError, Dims, LinearSystem, StackedSystem, lift_left,
                     lift_reorder, lift_right, propagate, stack_system)
from .scenarios import (SamplerSpec, ScenarioSet, count_decision_vars, load_scenarios,
                        required_sample_count, sample_scenarios, save_scenarios)
from .truncation import (TruncationMapping, TruncationResult, build_truncation_mapping,
                         certified_hull_distance, certify, compute_buffers, epsilon_vector,
                         greedy_truncate, hausdorff_distance, map_scenarios)
from .optimization import (BufferInfeasibleError, ConstraintSpec, ControllerPolicy, CostSpec,
                           ProblemSpec, apply_policy, assemble_openloop_problem,
                           assemble_scenario_problem, assemble_truncated_problem, solve)
from .validation import (ValidationReport, deterministic_containment_check,
                         monte_carlo_validate, wilson_interval)

__version__ = "0.1.0"
