"""Exclusive-penalty Q-learning and CQL on small, exactly solvable MDPs."""

from .analysis import (BiasReport, UnderestimationCertificate, alpha_threshold,
                       fixed_point_closed_form, measure_bias, run_scenario, verify_underestimation)
from .dataset import (BehaviorEstimate, OfflineDataset, compute_returns, estimate_behavior,
                      generate_dataset, load_dataset, save_dataset)
from .errors import (ConfigurationError, DegenerateGeometryError, DomainError, EPQError,
                     FormatError, OfflineAccessError, ParseError, SupportError)
from .kernels import BACKEND
from .learner import (LearnerConfig, TrainedAgent, epq_exact_iterate, cql_exact_iterate,
                      epq_sampled_loss, log_sum_exp_estimate, policy_improve, train)
from .mdp import (Mdp, QFunction, TabularPolicy, bellman_apply, exact_q, pendulum_mdp,
                  random_mdp)
from .penalty import (PenaltyConfig, adaptation_factor, average_penalty_cql,
                      average_penalty_epq, build_cluster_index, exclusive_penalty,
                      is_weight_clustered, is_weight_exact, penalty_term, prioritized_behavior)

__version__ = "0.1.0"
