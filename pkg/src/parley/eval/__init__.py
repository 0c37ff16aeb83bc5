"""Episode execution, metrics and reporting."""
from __future__ import annotations

from .metrics import (Aggregate, EvalReport, MetricsError, Rates, SeedResult, aggregate, compute_metrics,
                      format_cell, latency_report, seed_result)
from .runner import (LOG_FILES, REPLAY_FILES, EpisodeResult, ReplayPolicy, diff_logs, episode_seed, load_outcome,
                     replay_policies, run_episode, write_logs)
from .suite import EVAL_EPISODES, EVAL_SEEDS, build_policies, evaluate, family_for, run_episodes

__all__ = [
    "Aggregate", "EvalReport", "MetricsError", "Rates", "SeedResult", "aggregate", "compute_metrics",
    "format_cell", "latency_report", "seed_result", "LOG_FILES", "REPLAY_FILES", "EpisodeResult", "ReplayPolicy",
    "diff_logs", "episode_seed", "load_outcome", "replay_policies", "run_episode", "write_logs",
    "EVAL_EPISODES", "EVAL_SEEDS", "build_policies", "evaluate", "family_for", "run_episodes",
]
