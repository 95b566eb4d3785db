"""Training orchestration: config, replay, loop, evaluation, metrics and plots."""
from .agent_state import Architecture, CMILAgent, LatentActor, Optimizers
from .buffer import ReplayBuffer, SequenceBatch
from .config import ConfigError, RunConfig, load_config, parse_assignments
from .evaluation import EvalResult, evaluate
from .loop import RunResult, Trainer, run_training
from .metrics import METRICS_HEADER, MetricsRow, MetricsWriter, read_metrics
