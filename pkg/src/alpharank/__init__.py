"""Fixed-budget ranking and selection toolkit.

Sequential simulation-budget allocation as a belief MDP: conjugate or
particle-filter posteriors, classical allocation policies (EA, KG, OCBA,
AOAP, EI, PTV, static-optimal ratios), a Monte Carlo rollout policy, value
network pre-training, divide-and-conquer screening for large problems, and a
deterministic parallel experiment harness.
"""

from .core import (AlternativeStats, BeliefState, GroundTruth, PriorFamily,
                   PriorSpec, empty_belief, init_belief, make_truth, normal_prior,
                   predictive_sample, sample_ground_truth, select_mean,
                   select_optimal_pcs, simulate_observation, uninformative_prior,
                   update_posterior_conjugate, update_sample_stats)
from .dcr import DcrPlan, dcr_run, make_groups, plan_rounds
from .harness import (ConfigError, ExperimentConfig, MetricsRecord, emit_csv,
                      load_config, run_experiment)
from .nn import (AdamState, MlpModel, TrainingExample, adam_init, encode_input,
                 forward, init_model, load_model, loss, nn_next, save_model,
                 train_step)
from .particle import ParticleSet, init_particles, pf_summary, pf_update
from .policies import (PolicySpec, aoap_next, ea_next, ei_next, kg_next,
                       most_starving, next_action, ocba_next, ptv_next,
                       sop_ratios)
from .pretrain import (PretrainConfig, RoundReport, evaluate_policy,
                       generate_round_data, run_pretraining)
from .rng import stream
from .rollout import RolloutConfig, improvement_bound, rollout_next, rollout_value

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
