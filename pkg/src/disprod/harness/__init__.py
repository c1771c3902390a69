"""Experiment configuration, batch runs, metrics and the distribution study."""

from disprod.harness.config import (
    AXES,
    PLANNER_KINDS,
    ConfigError,
    EnvSection,
    ExperimentSpec,
    PlannerSection,
    SweepSection,
    parse_config,
    parse_config_text,
    write_config,
)
from disprod.harness.runner import (
    EPISODE_COLUMNS,
    RESULT_COLUMNS,
    EpisodeRecord,
    ExperimentResult,
    MetricsRow,
    compute_sl,
    derive_seed,
    read_results,
    run_experiment,
    write_episodes,
    write_results,
)
from disprod.harness.study import STUDY_COLUMNS, STUDY_ENVS, StudyResult, run_distribution_study, write_study

__all__ = [
    "AXES",
    "EPISODE_COLUMNS",
    "PLANNER_KINDS",
    "RESULT_COLUMNS",
    "STUDY_COLUMNS",
    "STUDY_ENVS",
    "ConfigError",
    "EnvSection",
    "EpisodeRecord",
    "ExperimentResult",
    "ExperimentSpec",
    "MetricsRow",
    "PlannerSection",
    "StudyResult",
    "SweepSection",
    "compute_sl",
    "derive_seed",
    "parse_config",
    "parse_config_text",
    "read_results",
    "run_distribution_study",
    "run_experiment",
    "write_config",
    "write_episodes",
    "write_results",
    "write_study",
]
