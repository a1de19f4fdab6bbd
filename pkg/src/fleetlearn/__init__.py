"""Fleet learning engine: shared-policy robot fleets with allocated human supervision."""

from .allocation import (
    AllocationMatrix,
    AllocatorConfig,
    PriorityVector,
    advance_bookkeeping,
    allocate,
    begin_interventions,
    intervention_kind,
)
from .config import RunConfig, build_env
from .envs import (
    EnvSpec,
    FleetState,
    GridEnv,
    HARD_RESET_TOKEN,
    InterventionRecord,
    KIND_HARD_RESET,
    KIND_TELEOP,
    NO_INTERVENTION,
    RobotState,
    SupervisorAction,
    constraint,
    expert_policy,
    initial_fleet,
    make_blockpush,
    make_gridworld,
    step_fleet,
)
from .learner import (
    CriticModel,
    Dataset,
    PolicyModel,
    PolicyOnEnv,
    act,
    act_batch,
    aggregate,
    collect_pretraining_data,
    constraint_dataset_stats,
    expert_dataset,
    make_goal_critic,
    make_safety_critic,
    sample_balanced_batch,
    to_critic_transitions,
    train_critic,
    update_policy,
)
from .metrics import (
    MetricsRecord,
    RoheConfig,
    classify_success,
    initial_record,
    read_metrics_log,
    record_step,
    rohe,
)
from .priorities import (
    PriorityConfig,
    RunningStats,
    band_score,
    compose_cur,
    compose_ugc,
    compose_uc,
    constraint_priority,
    ensemble_variance,
    entropy_uncertainty,
    goal_priority,
    random_priority,
    risk_priority,
)
from .gateway import ConsoleClient, GatewayTimeout, SupervisorGateway, serve
from .runner import (
    RunArtifacts,
    baseline_matching_budget,
    file_digest,
    replay,
    run_experiment,
    run_single_seed,
    run_sweep,
)

__version__ = "0.1.0"
