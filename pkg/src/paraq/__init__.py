"""paraq: concurrent off-policy Q-learning with lockstep batched inference.

A small dense-network DQN engine built for studying two executor
optimizations -- overlapping training with sampling, and advancing parallel
samplers in lockstep so their states share one batched prediction -- plus a
benchmark harness that measures their wall-clock effect and reproduces the
associated score-normalization arithmetic.
"""

from .agent import (
    EpsilonSchedule,
    HyperParams,
    epsilon_at,
    select_action,
    target_update,
    td_targets,
    train_minibatch,
)
from .backend import BACKEND
from .envs import GridWorld, SyntheticLatencyEnv, encode_state, evaluate_policy, make_env
from .executor import (
    RunRecord,
    batched_inference,
    run,
    sequential_reference,
    transaction_count,
)
from .harness import (
    RuntimeStats,
    RuntimeTable,
    TimingModel,
    ablation_grid,
    bench_variant,
    normalize_score,
    predict_runtime,
    score_report,
    to_factor,
    to_percent,
)
from .nn import (
    OptConfig,
    OptState,
    Parameters,
    copy_parameters,
    forward,
    gradient,
    init_network,
    rmsprop_step,
    theta_hash,
)
from .replay import ReplayMemory, SampleBuffer, Transition

__version__ = "0.1.0"
