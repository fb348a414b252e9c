"""Excitation signals for system identification and synthetic weather.

Setpoint schedules come in three families: random multisine (persistent
excitation for identification), piecewise constant with random dwell times,
and deterministic waveforms (sinusoidal, square, triangular) for validation
episodes. All generators are pure functions of a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .plant import (
    HP_SUPPLY_RANGE,
    TANK_SP_RANGE,
    TANK_SUPPLY_MARGIN,
    ZONE_SP_RANGE,
    ControlSetpoints,
    PlantError,
    WeatherSample,
)

STEP_MINUTES = 15.0
STEPS_PER_DAY = 96

KINDS = ("multisine", "piecewise-constant", "sinusoidal", "square", "triangular")

# Channel layout shared with ControlSetpoints.as_array().
CHANNEL_NAMES = ("hp_supply", "tank_1", "tank_2", "tank_3", "tank_4",
                 "zone_1", "zone_2", "zone_3", "zone_4")


def channel_boxes() -> np.ndarray:
    """Per-channel (low, high) bounds, shape (9, 2)."""
    rows = [HP_SUPPLY_RANGE]
    rows += [TANK_SP_RANGE] * 4
    rows += [ZONE_SP_RANGE] * 4
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class ExcitationSpec:
    """Recipe for one setpoint schedule.

    `amplitude` scales the per-channel swing as a fraction of the half-range
    of each setpoint box; 1.0 uses the full box.
    """

    kind: str = "multisine"
    duration_days: float = 7.0
    seed: int = 0
    n_tones: int = 8
    band_per_hour: tuple[float, float] = (1.0 / 24.0, 1.0)
    mean_dwell_h: float = 6.0
    waveform_period_h: float = 24.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlantError(f"unknown excitation kind {self.kind!r}")
        if self.duration_days <= 0:
            raise PlantError("duration_days must be positive")
        if self.n_tones < 0:
            raise PlantError("n_tones must be >= 0")
        if not 0.0 < self.band_per_hour[0] < self.band_per_hour[1]:
            raise PlantError("band must satisfy 0 < low < high (cycles/hour)")
        if self.mean_dwell_h <= 0 or self.waveform_period_h <= 0:
            raise PlantError("dwell and waveform periods must be positive")
        if not 0.0 <= self.amplitude <= 1.0:
            raise PlantError("amplitude must lie in [0, 1]")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_days * STEPS_PER_DAY))


def _apply_coupling(mat: np.ndarray) -> np.ndarray:
    """Clamp tank channels so tank_sp <= hp_supply - margin always holds.

    The hp box low end minus the margin equals the tank box low end, so the
    clamp never leaves the tank box.
    """
    mat = mat.copy()
    cap = mat[:, 0] - TANK_SUPPLY_MARGIN
    mat[:, 1:5] = np.minimum(mat[:, 1:5], cap[:, None])
    return mat


def _to_setpoints(mat: np.ndarray) -> list[ControlSetpoints]:
    return [ControlSetpoints.from_array(row) for row in mat]


def _multisine_channel(n: int, spec: ExcitationSpec, rng: np.random.Generator) -> np.ndarray:
    """One multisine track normalized to [0, 1].

    Tones sit on the DFT grid of the record (k cycles per record) restricted
    to the requested band, so the excitation is periodic over the record and
    its power lands on exact Fourier lines.
    """
    if spec.n_tones == 0:
        return np.full(n, 0.5)
    record_h = n * STEP_MINUTES / 60.0
    k_lo = int(np.ceil(spec.band_per_hour[0] * record_h))
    k_hi = int(np.floor(spec.band_per_hour[1] * record_h))
    k_hi = min(k_hi, n // 2 - 1)
    if k_lo < 1 or k_hi < k_lo:
        raise PlantError("record too short for the requested frequency band")
    lines = np.arange(k_lo, k_hi + 1)
    if len(lines) >= spec.n_tones:
        lines = rng.choice(lines, size=spec.n_tones, replace=False)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(lines))
    t = np.arange(n)
    sig = np.sum(np.cos(2.0 * np.pi * lines[:, None] * t[None, :] / n
                        + phases[:, None]), axis=0)
    lo, hi = sig.min(), sig.max()
    if hi - lo < 1e-12:
        return np.full(n, 0.5)
    return (sig - lo) / (hi - lo)


def _piecewise_channel(n: int, spec: ExcitationSpec, rng: np.random.Generator) -> np.ndarray:
    mean_steps = max(spec.mean_dwell_h * 60.0 / STEP_MINUTES, 1.0)
    out = np.empty(n)
    i = 0
    while i < n:
        dwell = rng.geometric(1.0 / mean_steps)
        out[i:i + dwell] = rng.uniform(0.0, 1.0)
        i += dwell
    return out


def _waveform_channel(n: int, spec: ExcitationSpec, phase: float) -> np.ndarray:
    t_h = np.arange(n) * STEP_MINUTES / 60.0
    arg = 2.0 * np.pi * t_h / spec.waveform_period_h + phase
    if spec.kind == "sinusoidal":
        w = np.sin(arg)
    elif spec.kind == "square":
        w = np.sign(np.sin(arg))
        w[w == 0.0] = 1.0
    else:
        w = 2.0 / np.pi * np.arcsin(np.sin(arg))
    return 0.5 + 0.5 * w


def generate(spec: ExcitationSpec, horizon: int | None = None) -> list[ControlSetpoints]:
    """Generate a setpoint schedule of `horizon` steps (default: full spec)."""
    n = spec.n_steps if horizon is None else int(horizon)
    if n <= 0:
        raise PlantError("horizon must be positive")
    boxes = channel_boxes()
    mid = boxes.mean(axis=1)
    half = 0.5 * (boxes[:, 1] - boxes[:, 0]) * spec.amplitude

    seeds = np.random.SeedSequence(spec.seed).spawn(len(CHANNEL_NAMES))
    mat = np.empty((n, len(CHANNEL_NAMES)))
    for c, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        if spec.kind == "multisine":
            unit = _multisine_channel(n, spec, rng)
        elif spec.kind == "piecewise-constant":
            unit = _piecewise_channel(n, spec, rng)
        else:
            # Deterministic waveforms: stagger channels by a fixed phase so
            # the eight outputs do not move in lockstep.
            unit = _waveform_channel(n, spec, phase=0.4 * c)
        mat[:, c] = mid[c] + (2.0 * unit - 1.0) * half[c]

    mat = np.clip(mat, boxes[:, 0], boxes[:, 1])
    mat = _apply_coupling(mat)
    return _to_setpoints(mat)


def synth_weather(days: float, seed: int,
                  start: datetime | None = None) -> list[WeatherSample]:
    """Synthetic Mediterranean winter-to-spring weather at 15-minute steps.

    Outdoor temperature is a seasonal cosine (coldest late January) plus a
    diurnal sine peaking mid-afternoon plus AR(1) noise. Irradiance is a
    clear-sky envelope from solar elevation times an AR(1)-smoothed
    cloudiness factor.
    """
    if days < 1:
        raise PlantError("days must be >= 1")
    if start is None:
        start = datetime(2023, 1, 1, 0, 0)
    n = int(round(days * STEPS_PER_DAY))
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    times = [start + timedelta(minutes=STEP_MINUTES * k) for k in range(n)]
    doy = np.array([t.timetuple().tm_yday for t in times], dtype=float)
    hod = np.array([t.hour + t.minute / 60.0 for t in times])

    seasonal = 15.0 - 7.0 * np.cos(2.0 * np.pi * (doy - 25.0) / 365.0)
    diurnal = 3.5 * np.sin(2.0 * np.pi * (hod - 9.0) / 24.0)
    phi = 0.97
    sigma = 1.2 * np.sqrt(1.0 - phi * phi)
    noise = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc = phi * acc + sigma * rng.standard_normal()
        noise[k] = acc
    t_out = seasonal + diurnal + noise

    lat = np.radians(41.39)
    decl = np.radians(23.45) * np.sin(2.0 * np.pi * (284.0 + doy) / 365.0)
    hour_angle = np.radians(15.0 * (hod - 12.0))
    sin_elev = (np.sin(lat) * np.sin(decl)
                + np.cos(lat) * np.cos(decl) * np.cos(hour_angle))
    clear = 1050.0 * np.clip(sin_elev, 0.0, None) ** 1.15

    # Cloudiness: slow AR(1) in logit space mapped to [0.15, 1].
    cl = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc = 0.995 * acc + 0.12 * rng.standard_normal()
        cl[k] = acc
    cloud = 0.15 + 0.85 / (1.0 + np.exp(-1.5 * (cl + 0.8)))
    ghi = clear * cloud

    rh = 0.62 - 0.012 * (t_out - 12.0) + 0.05 * rng.standard_normal(n)
    rh = np.clip(rh, 0.05, 0.98)

    return [WeatherSample(float(ghi[k]), float(t_out[k]), float(rh[k]), times[k])
            for k in range(n)]


def weather_to_array(series: list[WeatherSample]) -> np.ndarray:
    """Stack weather into columns [t_out, ghi, rh], shape (n, 3)."""
    return np.array([[w.t_out, w.ghi, w.rel_humidity] for w in series])


def setpoints_to_array(series: list[ControlSetpoints]) -> np.ndarray:
    """Stack setpoints into the 9-column channel layout, shape (n, 9)."""
    return np.array([sp.as_array() for sp in series])
