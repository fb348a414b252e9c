"""Evaluation layer: metrics, artifact store, experiment pipeline, CLI."""

from .config import ExperimentConfig, dump_config, load_config
from .metrics import (ControlMetrics, ForecastMetrics, control_metrics,
                      encdec_forecaster, episode_metrics, forecast_eval,
                      lss_forecaster, mae, smrae, window_starts)
from .store import (load_episode, load_record, read_table, save_episode,
                    save_record, write_episode_csv, write_table)

__all__ = [
    "ControlMetrics",
    "ExperimentConfig",
    "ForecastMetrics",
    "control_metrics",
    "dump_config",
    "encdec_forecaster",
    "episode_metrics",
    "forecast_eval",
    "load_config",
    "load_episode",
    "load_record",
    "lss_forecaster",
    "mae",
    "read_table",
    "save_episode",
    "save_record",
    "smrae",
    "window_starts",
    "write_episode_csv",
    "write_table",
]
