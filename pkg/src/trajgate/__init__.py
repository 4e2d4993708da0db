"""Decentralized multi-agent trajectory imitation with binary observation gates.

Per-role VRNN policies over gated multi-agent observations, with
mechanical-constraint penalties, court-grid macro-goals, HMM-based role
assignment, a synthetic benchmark, and rollout evaluation tooling.
"""

from .constraints import ConstraintConfig, gaussian_kl, gaussian_nll, mechanical_penalties
from .data import (Dataset, PlaySequence, Role, Sport, derive_kinematics, export_csv,
                   ingest_tracking, normalize_attack_direction, split_windows,
                   write_tracking)
from .evaluation import (MetricReport, accel_stats, evaluate_rollout, l2_metrics,
                         observation_stats, velocity_baseline)
from .macrogoal import GridSpec, label_macro_goals
from .observation import (ObservationEncoder, ObservationOverride, binary_gate,
                          force_observation, gumbel_softmax, observe)
from .policy import PolicyConfig, PolicyModel, RolloutResult, full_loss, rollout, \
    sequence_elbo
from .roles import RoleModel, assign_roles, fit_role_hmm, reindex, role_cost, \
    solve_assignment
from .synthetic import ScenarioSpec, generate_dataset, generate_scenario, min_jerk_segment
from .training import TrainConfig, load_checkpoint, select_best, train_policy

__version__ = "0.1.0"
