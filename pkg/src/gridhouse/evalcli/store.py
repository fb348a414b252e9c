"""Dataset and episode persistence plus deterministic CSV tables.

Records and episode traces travel as compressed numpy containers;
episode logs additionally export to a flat CSV with one row per control
period. Metric tables are written with explicit float formatting so a
rerun with the same seeds reproduces them byte for byte.
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .. import signals
from ..mpc import EpisodeLog

_FORMAT_VERSION = 1

EPISODE_CSV_COLUMNS = (
    "timestamp", "sp_hp_supply", "sp_tank_1", "sp_tank_2", "sp_tank_3",
    "sp_tank_4", "sp_zone_1", "sp_zone_2", "sp_zone_3", "sp_zone_4",
    "objective", "violation", "solve_seconds", "termination")


def save_record(path, inputs: np.ndarray, temps: np.ndarray,
                power: np.ndarray, start: datetime | None = None) -> None:
    """Write one simulation record (inputs, temperatures, thermal power)."""
    inputs = np.asarray(inputs, dtype=float)
    temps = np.asarray(temps, dtype=float)
    power = np.asarray(power, dtype=float)
    if not (len(inputs) == len(temps) == len(power)):
        raise ValueError("record series lengths differ")
    start = start or datetime(2023, 1, 1)
    np.savez_compressed(Path(path), format_version=np.int64(_FORMAT_VERSION),
                        inputs=inputs, temps=temps, power=power,
                        start=np.bytes_(start.isoformat()))


def load_record(path):
    """Read a record back as (inputs, temps, power, start)."""
    with np.load(Path(path)) as d:
        if int(d["format_version"]) != _FORMAT_VERSION:
            raise ValueError("unsupported record format version")
        start = datetime.fromisoformat(bytes(d["start"]).decode())
        return d["inputs"], d["temps"], d["power"], start


def save_episode(path, log: EpisodeLog) -> None:
    """Write a full episode trace to a compressed container."""
    np.savez_compressed(
        Path(path), format_version=np.int64(_FORMAT_VERSION),
        start=np.bytes_(log.start.isoformat()), setpoints=log.setpoints,
        temps=log.temps, p_el_thermal=log.p_el_thermal,
        p_appliances=log.p_appliances, p_pv=log.p_pv, t_out=log.t_out,
        objective=log.objective, violation=log.violation,
        solve_seconds=log.solve_seconds,
        termination=np.array(log.termination, dtype="U32"),
        warmup_steps=np.int64(log.warmup_steps),
        merit_monotone=np.bool_(log.merit_monotone))


def load_episode(path) -> EpisodeLog:
    with np.load(Path(path)) as d:
        if int(d["format_version"]) != _FORMAT_VERSION:
            raise ValueError("unsupported episode format version")
        return EpisodeLog(
            start=datetime.fromisoformat(bytes(d["start"]).decode()),
            setpoints=d["setpoints"], temps=d["temps"],
            p_el_thermal=d["p_el_thermal"], p_appliances=d["p_appliances"],
            p_pv=d["p_pv"], t_out=d["t_out"], objective=d["objective"],
            violation=d["violation"], solve_seconds=d["solve_seconds"],
            termination=[str(t) for t in d["termination"]],
            warmup_steps=int(d["warmup_steps"]),
            merit_monotone=bool(d["merit_monotone"]))


def write_episode_csv(path, log: EpisodeLog) -> None:
    """Flat per-step export: timestamps, applied setpoints, solver trace."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_CSV_COLUMNS)
        for k in range(log.n_steps):
            ts = log.start + timedelta(minutes=signals.STEP_MINUTES * k)
            row = [ts.isoformat()]
            row += [f"{v:.6f}" for v in log.setpoints[k]]
            row += [f"{log.objective[k]:.9G}", f"{log.violation[k]:.9G}",
                    f"{log.solve_seconds[k]:.6f}", log.termination[k]]
            w.writerow(row)


def write_table(path, header: list, rows: list) -> None:
    """CSV table with fixed cell formatting (floats rendered as %.9G)."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{c:.9G}" if isinstance(c, float) else c
                        for c in row])


def read_table(path):
    """Read a metric table back as (header, rows of strings)."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]
