"""Run configuration, training loop, persistence, sweeps and the command line."""
from .analyze import analyze_latents, analyze_mi, analyze_tactile_pred
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    EXPERIMENTS,
    RunConfig,
    SweepSettings,
    experiment_config,
    experiment_matrix,
    load_config,
    validate_table_ranges,
)
from .metrics_log import MetricsLogger, MetricsRow, read_metrics
from .sweep import Param, SweepSpec, Trial, optimize, run_sweep, suggest, table_space
from .trainer import Trainer, evaluate_policy, latest_checkpoint, run_eval, run_train

__all__ = [
    "EXPERIMENTS", "MetricsLogger", "MetricsRow", "Param", "RunConfig", "SweepSettings", "SweepSpec", "Trainer",
    "Trial", "analyze_latents", "analyze_mi", "analyze_tactile_pred", "evaluate_policy", "experiment_config",
    "experiment_matrix", "latest_checkpoint", "load_checkpoint", "load_config", "optimize", "read_metrics",
    "run_eval", "run_sweep", "run_train", "save_checkpoint", "suggest", "table_space", "validate_table_ranges",
]
