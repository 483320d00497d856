"""Closed-loop scenarios, trajectory ingest, metrics, batch runs and the CLI."""
from .batch import BatchResult, batch_run
from .metrics import MetricsReport, compute_metrics, jerk_series, time_to_collision, time_to_safety
from .scenario import (
    ScenarioConfig, StepRecord, load_scenario_config, read_records, run_scenario,
    scenario_from_dict, write_records,
)
from .trajectories import (
    filter_trajectories, load_trajectories, synthetic_batch, synthetic_trajectory,
    write_trajectories,
)
