"""Experiment configuration: one flat key-value file drives everything.

The YAML file maps 1:1 onto ExperimentConfig fields; unknown keys are
rejected so typos fail loudly instead of silently falling back to
defaults. Defaults describe the desk-scale experiment; a full-scale
profile only changes field values, never code.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from datetime import datetime
from pathlib import Path

import numpy as np
import yaml


@dataclass(frozen=True)
class ExperimentConfig:
    artifacts: str = "artifacts/desk"
    start_date: str = "2023-01-05"

    corpus_days: int = 240
    block_days: int = 2
    recipe_seed: int = 44
    block_seed_base: int = 2000
    train_weather_seed: int = 11

    eval_days: int = 14
    eval_recipe_seed: int = 777
    eval_block_seed_base: int = 9000
    eval_weather_seed: int = 31

    episode_days: int = 14
    warmup_days: int = 1
    episode_weather_seed: int = 7

    lss_points: tuple = (4000, 4000, 2000, 2000, 750)
    lss_offsets: tuple = (0, 4500, 9000, 11500, 14000)
    lss_order: int = 8
    kernel_gamma: float = 0.1
    kernel_ridge: float = 1.0
    kernel_support: int = 4000

    rnn_hidden: int = 64
    rnn_encoder_steps: int = 48
    rnn_mlp: tuple = (64, 32)
    rnn_seeds: tuple = (3, 4, 5, 6, 7)
    rnn_epochs: tuple = (48, 48, 36, 18, 36)
    rnn_decode: tuple = (2, 4, 6, 8, 12, 16, 24, 32, 48)
    rnn_batch: int = 200
    rnn_stages: tuple = ((1e-3, 4.0), (5e-4, 3.0), (2e-4, 3.0), (1e-4, 2.0))

    horizon: int = 12
    sqp_iterations: int = 12
    rb_zone_setpoints: tuple = (19.0, 19.5, 20.0, 21.0)
    count_mode: str = "sample"
    window_short: int = 4
    window_long: int = 96
    workers: int = 1

    def __post_init__(self):
        if min(self.corpus_days, self.block_days, self.eval_days,
               self.episode_days, self.horizon, self.sqp_iterations) < 1:
            raise ValueError("durations and solver limits must be positive")
        if self.warmup_days < 0 or self.workers < 1:
            raise ValueError("warmup must be >= 0 and workers >= 1")
        if len(self.lss_points) != len(self.lss_offsets):
            raise ValueError("one data offset per linear instance required")
        if len(self.rnn_seeds) != len(self.rnn_epochs):
            raise ValueError("one epoch budget per network seed required")
        n_corpus = self.corpus_days * 96
        for pts, off in zip(self.lss_points, self.lss_offsets):
            if off < 0 or off + pts > n_corpus:
                raise ValueError("instance data slice outside the corpus")
        if self.count_mode not in ("sample", "room"):
            raise ValueError("count_mode must be 'sample' or 'room'")
        if min(self.window_short, self.window_long) < 1:
            raise ValueError("evaluation windows must be positive")
        if not self.rnn_stages or any(w <= 0 or lr <= 0
                                      for lr, w in self.rnn_stages):
            raise ValueError("stage rates and weights must be positive")
        datetime.fromisoformat(self.start_date)

    @property
    def start(self) -> datetime:
        return datetime.fromisoformat(self.start_date)

    def stage_epochs(self, total: int) -> list:
        """Split a per-instance epoch budget across the rate stages.

        Cumulative rounding keeps the per-stage counts summing exactly
        to the budget; later stages absorb the rounding slack.
        """
        weights = [w for _, w in self.rnn_stages]
        frac = np.cumsum(weights) / sum(weights)
        bounds = [int(round(total * f)) for f in frac]
        out, prev = [], 0
        for (lr, _), hi in zip(self.rnn_stages, bounds):
            if hi > prev:
                out.append((lr, hi - prev))
            prev = hi
        return out


_TUPLE_FIELDS = {"lss_points", "lss_offsets", "rnn_mlp", "rnn_seeds",
                 "rnn_epochs", "rnn_decode", "rb_zone_setpoints"}


def _as_tuple(value):
    return tuple(tuple(v) if isinstance(v, (list, tuple)) else v
                 for v in value)


def load_config(path) -> ExperimentConfig:
    """Parse a YAML mapping into a validated ExperimentConfig."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("configuration file must hold a key-value mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    for key, value in list(raw.items()):
        if key in _TUPLE_FIELDS or key == "rnn_stages":
            raw[key] = _as_tuple(value)
    return ExperimentConfig(**raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    """Write the resolved configuration next to the artifacts it governs."""
    data = asdict(cfg)
    for key, value in data.items():
        if isinstance(value, tuple):
            data[key] = [list(v) if isinstance(v, tuple) else v
                         for v in value]
    Path(path).write_text(yaml.safe_dump(data, sort_keys=True))
