"""Policy-regularized distributionally robust RL with linear function approximation."""

from .agents import AgentConfig, EpisodeLog, QParameters, run_agent, run_dr_lsvi_ucb, run_drrpo, run_lsvi_ucb
from .duality import drmdp_dual_max, exact_dual_value, rrmdp_truncate_targets
from .envs import PutOptionEnv, PutOptionParams, SimulatedEnvParams, build_simulated_env
from .harness import ConfigError, SweepConfig, evaluate_policy, load_config, run_sweep
from .oracle import ave_subopt, oracle_optimal, oracle_policy_value
from .policy import ReferencePolicy, SoftmaxPolicy

__version__ = "0.1.0"
